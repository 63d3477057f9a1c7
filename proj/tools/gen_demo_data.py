#!/usr/bin/env python3
"""Regenerates data/demo: a 20-note / 10-todo corpus and the scripted model replies."""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data" / "demo"

NOTES = [
    ("Kickoff for the data platform migration",
     "Tomas Reyes asked me to lead the Data Platform Migration at Northwind Labs. The plan is to move the nightly batch jobs off the old cluster before March.",
     "document", "work-notes"),
    ("1:1 with Tomas",
     "Tomas Reyes wants weekly status mails on the Data Platform Migration. He is worried about the reporting freeze at quarter end.",
     "document", "work-notes"),
    ("Northwind Labs offsite",
     "Northwind Labs offsite in Porto. Lots of talk about hiring two more data engineers. I pitched a shared on-call rotation.",
     "audio-transcript", "voice-memo"),
    ("Migration risks",
     "Biggest risks for the Data Platform Migration: the billing export, undocumented cron jobs, and the fact that only I know the old scheduler.",
     "document", "work-notes"),
    ("Kestrel idea",
     "Kestrel: a small app that logs bird sightings from photos and suggests the species. Maya Lindqvist said she would test it on her hikes.",
     "document", "side-projects"),
    ("Kestrel data model",
     "Kestrel needs sightings, locations and photos. Photos come straight from the Fujifilm X100V over wifi, so the import flow matters most.",
     "document", "side-projects"),
    ("Call with Maya",
     "Maya Lindqvist is moving to Uppsala in the spring. She wants to hike the Kungsleden together in August and bring her birding guide.",
     "audio-transcript", "voice-memo"),
    ("Camera settings",
     "Fujifilm X100V settings for birds: aperture priority, auto ISO up to 6400, continuous focus. The built-in ND filter helps at the lake.",
     "document", "hobbies"),
    ("Training plan week 1",
     "Started the 12 week plan for the Lisbon Half Marathon. Three easy runs and one long run of 10 km. Left knee felt stiff after the long run.",
     "document", "running-log"),
    ("Physio appointment",
     "Dr. Okafor thinks the knee pain is patellar tendinopathy. Eccentric squats daily, no hill repeats for two weeks, then reassess.",
     "document", "health"),
    ("Training plan week 4",
     "Long run up to 14 km for the Lisbon Half Marathon. Knee is better after the exercises from Dr. Okafor. Target pace 5:20 per km.",
     "document", "running-log"),
    ("Sourdough attempt 3",
     "Sourdough baking notes: 75 percent hydration was too wet, the loaf spread flat. Next time 70 percent and a longer cold retard.",
     "document", "kitchen"),
    ("Sourdough for the neighbours",
     "Baked two loaves for the neighbours. Sourdough baking is finally consistent with the Dutch oven at 250 degrees for 20 minutes covered.",
     "document", "kitchen"),
    ("Spanish lessons",
     "Booked Spanish lessons twice a week before the Lisbon trip. I know Lisbon speaks Portuguese, but the tutor also teaches Portuguese basics.",
     "document", "learning"),
    ("Article on schedulers",
     "Saved an article comparing workflow schedulers. Could replace the old scheduler during the Data Platform Migration instead of porting cron jobs one by one.",
     "webpage", "reading-list"),
    ("Budget for Kestrel",
     "Kestrel hosting should stay under 10 euros a month. Use the free tier for image storage and run species detection on the phone.",
     "document", "side-projects"),
    ("Photo walk",
     "Photo walk at the lake with the Fujifilm X100V. Got a heron and two grebes. Maya Lindqvist identified the grebes from the photos.",
     "image-caption", "photos"),
    ("Quarter planning",
     "Northwind Labs quarter planning: the Data Platform Migration is the top priority, the dashboard rewrite moves to next quarter.",
     "document", "work-notes"),
    ("Race logistics",
     "Lisbon Half Marathon race day is in October. Flights booked, hotel near the start line. Need to pick up the bib the day before.",
     "document", "travel"),
    ("Knee check-in",
     "Second visit with Dr. Okafor. Cleared for hill repeats again, keep the eccentric squats twice a week until the Lisbon Half Marathon.",
     "document", "health"),
]

TODOS = [
    ("Send weekly migration status to Tomas Reyes", "2025-02-07T17:00:00Z", "open"),
    ("Document the old scheduler before the Data Platform Migration cutover", "2025-02-20T12:00:00Z", "open"),
    ("Write the photo import flow for Kestrel", None, "open"),
    ("Ask Maya Lindqvist which trail maps she uses", None, "done"),
    ("Book follow-up with Dr. Okafor", "2025-03-03T09:00:00Z", "done"),
    ("Buy gels for the Lisbon Half Marathon long runs", None, "open"),
    ("Feed the sourdough starter before the weekend bake", "2025-02-08T08:00:00Z", "open"),
    ("Update the Fujifilm X100V firmware", None, "open"),
    ("Prepare Spanish lessons homework", "2025-02-10T18:00:00Z", "open"),
    ("Draft the Northwind Labs on-call proposal", "2025-02-14T17:00:00Z", "open"),
]

ENTITIES = [
    ("Tomas Reyes", "person", "The user's manager at Northwind Labs."),
    ("Northwind Labs", "organization", "The company the user works for."),
    ("Data Platform Migration", "project", "The user's main work project: moving batch jobs off the old cluster."),
    ("Kestrel", "project", "The user's side project, an app that logs bird sightings from photos."),
    ("Maya Lindqvist", "person", "The user's sister, a keen hiker and birder."),
    ("Fujifilm X100V", "artifact", "The user's camera, used for bird photos."),
    ("Lisbon Half Marathon", "event", "The half marathon the user is training for."),
    ("Dr. Okafor", "person", "The user's physiotherapist treating a knee problem."),
    ("Sourdough baking", "concept", "The user's baking hobby."),
    ("Spanish lessons", "concept", "Language lessons the user booked before the Lisbon trip."),
]

RELATIONS = [
    ("Tomas Reyes", "Northwind Labs", "Tomas Reyes manages the user at Northwind Labs."),
    ("Data Platform Migration", "Northwind Labs", "The migration is the top priority at Northwind Labs."),
    ("Tomas Reyes", "Data Platform Migration", "Tomas Reyes sponsors the migration."),
    ("Maya Lindqvist", "Kestrel", "Maya Lindqvist tests Kestrel on her hikes."),
    ("Fujifilm X100V", "Kestrel", "Kestrel imports photos from the Fujifilm X100V."),
    ("Dr. Okafor", "Lisbon Half Marathon", "Dr. Okafor treats the knee so the user can run the race."),
]

# Five replies of six phrasings each; identical prompts cycle through them.
MEMORY_SELF = [
    "What did I write about {e} most recently?",
    "When did I last mention {e} in my notes?",
    "Remind me what my notes say about {e}.",
    "What open to-do items do I have related to {e}?",
    "What rumor about {e} did I hear?",
    "How has my view of {e} changed over time?",
    "Which of my notes connect {e} to other things I care about?",
    "What was the last decision I made about {e}?",
    "Quickly, what is {e}?",
    "Summarize everything I know about {e}.",
    "What worried me about {e}?",
    "What is the next step I planned for {e}?",
    "Did I set any deadline involving {e}?",
    "Who else shows up in my notes together with {e}?",
    "What numbers or figures did I record about {e}?",
    "Where was I when I wrote about {e}?",
    "What did I promise someone regarding {e}?",
    "What went well with {e} so far?",
    "What should I remember before dealing with {e} again?",
    "Is there anything about {e} I said I would revisit?",
    "Give me a one-line reminder about {e}.",
    "Which record first mentions {e}?",
    "What did I learn from {e}?",
    "How much time have I spent on {e} lately?",
    "What would I tell a friend about {e}?",
    "What is still unresolved about {e}?",
    "What plans for next month involve {e}?",
    "What did I note about the cost of {e}?",
    "What goal did I set around {e}?",
    "Have I finished anything related to {e}?",
]

MEMORY_THIRD = [
    "What can you tell me about your user's connection to {e}?",
    "Does your user have any plans involving {e}?",
    "How would your user describe {e}?",
    "Is your user busy with {e} this month?",
    "Any rumor about {e} your user mentioned?",
    "What should I know about {e} before meeting your user?",
    "Has your user mentioned any problems with {e}?",
    "Could your user share an update on {e}?",
    "Quickly, is your user into {e}?",
    "What role does {e} play in your user's life?",
    "Is {e} a priority for your user right now?",
    "Who does your user work with on {e}?",
    "What is your user's next milestone for {e}?",
    "Would your user welcome help with {e}?",
    "When is your user free to talk about {e}?",
    "How long has your user been involved with {e}?",
    "Does your user have a deadline for {e}?",
    "What does your user enjoy about {e}?",
    "Has anything about {e} changed recently for your user?",
    "What would your user like me to know about {e}?",
    "Is your user worried about {e}?",
    "Can your user recommend anything related to {e}?",
    "What equipment or tools does your user use for {e}?",
    "How does {e} fit into your user's week?",
    "Does your user keep notes about {e}?",
    "What is your user hoping to achieve with {e}?",
    "Can I ask your user a favour related to {e}?",
    "What is the status of {e} for your user?",
    "Which people does your user associate with {e}?",
    "What would surprise me about your user and {e}?",
]

ENHANCE = [
    "Help me plan the next two weeks around {e}.",
    "How should I prepare for my next step with {e}?",
    "Give me a checklist for {e}.",
    "What are common mistakes people make with {e}?",
    "Write a short status update about {e}.",
    "Suggest three ways to make progress on {e} this week.",
    "How do I explain {e} to someone new?",
    "What resources would help me with {e}?",
    "Draft a message asking for advice on {e}.",
    "How can I fit {e} into a busy schedule?",
    "What should I budget for {e}?",
    "Make a risk list for {e}.",
    "What questions should I ask an expert about {e}?",
    "Plan a weekend that includes {e}.",
    "How do I measure progress on {e}?",
    "Write a to-do list for {e}.",
    "What would a good outcome for {e} look like by summer?",
    "How do I avoid burning out on {e}?",
    "Propose a timeline for {e}.",
    "What tools do people use for {e}?",
    "Help me decide what to drop so I have time for {e}.",
    "How do I get feedback on {e}?",
    "Summarize the trade-offs I face with {e}.",
    "What should I do first tomorrow about {e}?",
    "Give me a pep talk about {e}.",
    "How can I involve friends in {e}?",
    "What is a realistic goal for {e} this quarter?",
    "Outline a plan B for {e}.",
    "Which habits would help with {e}?",
    "How do I keep notes on {e} more effectively?",
]

CRITIC = [
    "I need a concrete weekly plan for {e} that fits my situation.",
    "I want advice on the biggest risk with {e}.",
    "I need to know what to prioritise next for {e}.",
    "I want a realistic timeline for {e}.",
    "I need help deciding whether to spend more time on {e}.",
    "I want a cheaper way to handle {e}.",
    "I need a short explanation of {e} for my family.",
    "I want to avoid repeating my mistakes with {e}.",
    "I need a checklist before the next milestone of {e}.",
    "I want ideas to make {e} more fun.",
    "I need to plan {e} around my other commitments.",
    "I want feedback on my approach to {e}.",
    "I need a contingency plan for {e}.",
    "I want to know which tools suit {e}.",
    "I need a message to someone about {e}.",
    "I want to measure progress on {e} better.",
    "I need to cut the effort I put into {e} in half.",
    "I want a list of questions to ask about {e}.",
    "I need to finish something for {e} by the end of the month.",
    "I want to delegate part of {e}.",
    "I need to explain a delay on {e}.",
    "I want to restart {e} after a break.",
    "I need to prepare for a conversation about {e}.",
    "I want to combine {e} with my travel plans.",
    "I need a realistic budget for {e}.",
    "I want to learn faster for {e}.",
    "I need a daily routine that includes {e}.",
    "I want to review how {e} went so far.",
    "I need to decide on next steps for {e} today.",
    "I want to share my progress on {e}.",
]


def rounds(phrasings):
    return ["\n".join("Q|" + p.replace("{e}", "$1") for p in phrasings[i:i + 6]) for i in range(0, 30, 6)]


def reasoning(kind):
    return ("The records show several concrete details about $1: when it was mentioned, what was decided, and what "
            "is still open. I should rely only on those records, keep the dates and numbers exactly as written, and "
            "connect $1 to the people and projects that appear next to it. " + kind)


def write(name, obj):
    path = ROOT / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def main():
    notes = []
    for i, (title, content, modality, source) in enumerate(NOTES):
        notes.append({"title": title, "content": content, "modality": modality, "source": source,
                      "created_at": f"2025-01-{i + 2:02d}T09:00:00Z"})
    (ROOT / "corpus").mkdir(parents=True, exist_ok=True)
    (ROOT / "corpus" / "notes.jsonl").write_text("".join(json.dumps(n) + "\n" for n in notes))
    todos = []
    for i, (text, due, status) in enumerate(TODOS):
        t = {"text": text, "status": status, "created_at": f"2025-01-{i + 2:02d}T18:00:00Z"}
        if due:
            t["due"] = due
        todos.append(t)
    (ROOT / "corpus" / "todos.jsonl").write_text("".join(json.dumps(t) + "\n" for t in todos))

    graph = [f"ENTITY|{n}|{t}|{d}" for n, t, d in ENTITIES] + [f"RELATION|{a}|{b}|{d}" for a, b, d in RELATIONS]
    synth = {"entries": [
        {"template": "extract.graph", "response": "\n".join(graph)},
        {"template": "community.summary", "pattern": "- ([^(\\n]+) \\(", "expand": True,
         "response": "A cluster around $1 and the entities linked to it in the user's notes."},
        {"template": "profile.biography",
         "response": "A data engineer at Northwind Labs who leads the Data Platform Migration, builds the Kestrel "
                     "birding app on the side, and trains for the Lisbon Half Marathon."},
        {"template": "profile.status",
         "response": "Focused on the Data Platform Migration deadline while rehabbing a knee with Dr. Okafor ahead of "
                     "the Lisbon Half Marathon. Kestrel and sourdough baking fill the weekends."},
        {"template": "profile.tags", "response": "\n".join([
            "TAG|long-distance running|Lisbon Half Marathon",
            "TAG|bird photography|Fujifilm X100V",
            "TAG|small self-hosted side projects|Kestrel",
            "TAG|weekend bread baking|Sourdough baking",
            "TAG|language learning before trips|Spanish lessons"])},
        {"template": "memory_qa.question", "pattern": "Entity: ([^\\n]+)[\\s\\S]*Perspective: first-person",
         "expand": True, "responses": rounds(MEMORY_SELF)},
        {"template": "memory_qa.question", "pattern": "Entity: ([^\\n]+)[\\s\\S]*Perspective: third-person",
         "expand": True, "responses": rounds(MEMORY_THIRD)},
        {"template": "context_enhance.need", "pattern": "Entity: ([^\\n]+)", "expand": True,
         "responses": rounds(ENHANCE)},
        {"template": "context_critic.need", "pattern": "Entity: ([^\\n]+)", "expand": True,
         "responses": rounds(CRITIC)},
        {"template": "memory_qa.strong", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "<reasoning>" + reasoning("The answer should be short and point to the relevant records.") +
                     "</reasoning>\nAccording to the notes, $1 comes up alongside the related records listed above; "
                     "the latest entry is the one to rely on."},
        {"template": "context_enhance.strong", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "<reasoning>" + reasoning("The rewrite keeps the request in the first person.") +
                     "</reasoning>\nI am asking about $1. For context, my notes list the relevant dates, people and "
                     "constraints, so please tailor the advice to them."},
        {"template": "memory_qa.weak", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "From the notes, $1 is mentioned in the related records and the latest entry is the one to rely on."},
        {"template": "context_enhance.weak", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "I am asking about $1; please take my recorded dates, people and constraints into account."},
        {"template": "memory_qa.multi_step.reasoning", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": reasoning("First list the records, then answer.")},
        {"template": "context_enhance.multi_step.reasoning", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": reasoning("First list the constraints, then rewrite.")},
        {"template": "memory_qa.multi_step.answer", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "From the notes, $1 is mentioned in the related records and the latest entry is the one to rely on."},
        {"template": "context_enhance.multi_step.answer", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "I am asking about $1; please take my recorded dates, people and constraints into account."},
    ]}
    write("mock/synth.json", synth)

    write("mock/expert.json", {"entries": [
        {"template": "context_critic.expert",
         "response": "Here is a general plan: set a clear goal, split it into weekly steps, review progress every "
                     "Sunday and adjust. Keep a buffer for unexpected problems."},
        {"template": "router.expert",
         "response": "Start with a clear goal, split it into weekly steps, and review progress every Sunday."},
        {"template": "router.revise",
         "response": "Revised: the plan now accounts for the deadline, the people involved and the budget you "
                     "mentioned, with one buffer week before the milestone."},
    ]})

    critic_tail = ("\nThe expert gave a generic plan for $1 and ignored the dates and constraints in my records.\n"
                   "VERDICT: INSUFFICIENT")
    write("mock/self.json", {"entries": [
        {"template": "context_critic.strong", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": "<reasoning>" + reasoning("The expert answer has to be checked against those details.") +
                     "</reasoning>" + critic_tail},
        {"template": "context_critic.weak", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": critic_tail.lstrip("\n")},
        {"template": "context_critic.multi_step.reasoning", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": reasoning("Check the expert answer against them.")},
        {"template": "context_critic.multi_step.answer", "pattern": "Primary entity: ([^\\n]+)", "expand": True,
         "response": critic_tail.lstrip("\n")},
    ]})

    write("mock/judge.json", {"entries": [
        {"template": "filter.judge", "pattern": "Query:\\n[^\\n]*[Rr]umou?r", "response": "QUALITY=0"},
        {"template": "filter.judge", "pattern": "Query:\\n[^\\n]*Quickly", "response": "QUALITY=0.5"},
        {"template": "filter.judge", "response": "QUALITY=1"},
        {"template": "dpo.judge", "response": "PREFERRED=REFERENCE"},
        {"template": "judge.memory", "pattern": "names [^\\n]*Empathy",
         "response": "Correctness=1\nHelpfulness=0.5\nCompleteness=0.5\nEmpathy=1\nRATIONALE=grounded but brief"},
        {"template": "judge.memory",
         "response": "Correctness=1\nHelpfulness=0.5\nCompleteness=0.5\nRole-correctness=1\n"
                     "RATIONALE=speaks for the user without oversharing"},
        {"template": "judge.enhance", "response": "ContextEnhance=0.5\nRATIONALE=adds some relevant details"},
        {"template": "judge.critic", "response": "ContextCritic=0.75\nRATIONALE=identifies the main gap"},
    ]})

    # The personal model: answers SFT-style prompts (eval, DPO sampling) and serves the router.
    write("mock/personal.json", {"stream_chunk": 24, "entries": [
        {"template": "sft.memory_self", "pattern": "\\n([^\\n]+)$", "expand": True,
         "response": "<reasoning>I only vaguely remember this.</reasoning>\nI think you wrote something about that, "
                     "but I do not remember the details: $1"},
        {"template": "sft.memory_third_party", "pattern": "\\n([^\\n]+)$", "expand": True,
         "response": "<reasoning>Be careful about what to share.</reasoning>\nMy user has mentioned this before, but "
                     "I cannot say more right now: $1"},
        {"template": "sft.context_enhance", "pattern": "Request to enhance: ([^\\n]+)", "expand": True,
         "response": "<reasoning>Add a little context.</reasoning>\n$1 Please keep my schedule in mind."},
        {"template": "sft.context_critic",
         "response": "<reasoning>Compare with the need.</reasoning>\nThe answer is generic and misses my deadlines.\n"
                     "VERDICT: INSUFFICIENT"},
        {"template": "router.perspective", "pattern": "Message: [^\\n]*\\byour user\\b", "response": "THIRD_PARTY"},
        {"template": "router.perspective", "response": "SELF"},
        {"template": "router.classify", "pattern": "Message: [^\\n]*\\b(plan|draft|write)\\b", "response": "ENHANCE"},
        {"template": "router.classify", "pattern": "Message: [^\\n]*\\b(advice|review|critique)\\b",
         "response": "CRITIC"},
        {"template": "router.classify", "response": "DIRECT"},
        {"template": "router.direct",
         "response": "From your notes: the Data Platform Migration is the top priority at Northwind Labs, and the "
                     "Lisbon Half Marathon is in October."},
        {"template": "router.enhance", "pattern": "Original request: ([^\\n]+)", "expand": True,
         "response": "$1 For context: I lead the Data Platform Migration at Northwind Labs, I train for the Lisbon "
                     "Half Marathon, and my weekends go to Kestrel."},
        {"template": "router.guard", "response": "ROLE=OK"},
        {"template": "router.critique", "pattern": "round 1\\)",
         "response": "The answer ignores my migration deadline and my knee rehab schedule.\nVERDICT: INSUFFICIENT"},
        {"template": "router.critique", "response": "This now covers what I need.\nVERDICT: SUFFICIENT"},
    ]})

    write("gateway.json", {"audit_log": None, "roles": {
        "synth": {"mock_script": "mock/synth.json", "max_concurrent": 4},
        "self": {"mock_script": "mock/self.json", "max_concurrent": 4},
        "expert": {"mock_script": "mock/expert.json", "max_concurrent": 4},
        "judge": {"mock_script": "mock/judge.json", "max_concurrent": 4},
        "l2": {"mock_script": "mock/personal.json", "max_concurrent": 2},
        "tuned": {"mock_script": "mock/personal.json", "max_concurrent": 2},
    }})

    write("memloom.json", {
        "workdir": "work",
        "corpus": "corpus",
        "gateway": "gateway.json",
        "seed": 42,
        "parallelism": 4,
        "index": {"batch_size": 8, "profile_top_k": 20},
        "synth": {"cot_style": "strong", "multipliers": {"memory_qa": 18, "context_enhance": 9, "context_critic": 9}},
        "filter": {"quality_threshold": 0.5},
        "dpo": {"enabled": True, "ratio": 0.2},
        "eval": {"n_per_task": 60},
        "train": {"command": "sh train_mock.sh {output}"},
        "router": {"max_rounds": 2},
        "server": {"host": "127.0.0.1", "port": 8080, "token_env": "MEMLOOM_SERVER_TOKEN"},
    })

    (ROOT / "train_mock.sh").write_text(
        "#!/bin/sh\n"
        "# Stand-in trainer: registers the scripted personal model as the tuned endpoint.\n"
        "set -e\n"
        "out=\"$1\"\n"
        "mkdir -p \"$out\"\n"
        "echo \"registering the scripted personal model\"\n"
        "printf '{\"mock_script\": \"%s/mock/personal.json\"}\\n' \"$(pwd)\" > \"$out/endpoint.json\"\n")


if __name__ == "__main__":
    main()
