//! Small generated corpus for desk-scale runs.
//!
//! Twelve relations, two of them planted pairs of look-alikes (city vs state
//! of birth, cities vs states of residence). Each relation has "plain"
//! templates that use words of the relation name and paraphrase templates
//! that avoid them; the look-alike pairs share their paraphrases and differ
//! only in the kind of tail entity.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::seed::rng_for;

const PEOPLE: &[&str] = &[
    "Anna Keller", "Tom Rivera", "Mei Tanaka", "Omar Haddad", "Lena Novak", "Jorge Silva", "Priya Nair",
    "Erik Lund", "Grace Obi", "Ivan Petrov", "Sara Cohen", "Luca Bianchi", "Nora Walsh", "Ken Ito",
    "Ada Mensah", "Paul Girard",
];
const CITIES: &[&str] = &[
    "Lyon", "Boston", "Osaka", "Porto", "Leeds", "Denver", "Turin", "Kraków", "Austin", "Bergen", "Quito",
    "Tampa",
];
const STATES: &[&str] = &[
    "Ohio", "Texas", "Bavaria", "Ontario", "Queensland", "Kerala", "Oregon", "Saxony", "Manitoba", "Nevada",
    "Tuscany", "Iowa",
];
const ORGS: &[&str] = &[
    "Norcom", "Vexa Labs", "Bluefin Group", "Altair Bank", "Helix Foods", "Quarry Media", "Solent Air",
    "Mosaic Health",
];
const TITLES: &[&str] = &["engineer", "senator", "architect", "chef", "professor", "pilot", "editor", "judge"];
const AGES: &[&str] = &["33", "41", "27", "58", "64", "19", "72", "45"];
const DATES: &[&str] = &["March 3, 1998", "June 12, 2004", "May 1, 1987", "July 9, 2011", "April 22, 1979", "October 5, 2015"];
const COUNTS: &[&str] = &["1,200", "450", "30,000", "8,500", "96", "2,700"];

#[derive(Clone, Copy)]
enum Pool {
    Person,
    City,
    State,
    Org,
    Title,
    Age,
    Date,
    Count,
}

impl Pool {
    fn values(self) -> &'static [&'static str] {
        match self {
            Pool::Person => PEOPLE,
            Pool::City => CITIES,
            Pool::State => STATES,
            Pool::Org => ORGS,
            Pool::Title => TITLES,
            Pool::Age => AGES,
            Pool::Date => DATES,
            Pool::Count => COUNTS,
        }
    }
}

struct RelationTemplates {
    name: &'static str,
    head: Pool,
    tail: Pool,
    plain: &'static [&'static str],
    paraphrase: &'static [&'static str],
}

const BIRTH_PARAPHRASES: &[&str] = &[
    "{h} came into the world in {t}.",
    "{h}, who grew up near {t}, spent a childhood there.",
    "Raised from infancy in {t}, {h} later moved abroad.",
];
const RESIDENCE_PARAPHRASES: &[&str] = &[
    "{h} has lived in {t} for years.",
    "These days {h} makes a home in {t}.",
    "{h} moved to {t} and settled down.",
];

const TEMPLATES: &[RelationTemplates] = &[
    RelationTemplates {
        name: "person city of birth",
        head: Pool::Person,
        tail: Pool::City,
        plain: &["The city of birth of {h} is {t}.", "{h} was a person whose birth city was {t}."],
        paraphrase: BIRTH_PARAPHRASES,
    },
    RelationTemplates {
        name: "person state or province of birth",
        head: Pool::Person,
        tail: Pool::State,
        plain: &["The state or province of birth of {h} is {t}.", "{h} was a person whose birth state was {t}."],
        paraphrase: BIRTH_PARAPHRASES,
    },
    RelationTemplates {
        name: "person cities of residence",
        head: Pool::Person,
        tail: Pool::City,
        plain: &["Among the cities of residence of {h} is {t}.", "{h} is a person with residence in the city of {t}."],
        paraphrase: RESIDENCE_PARAPHRASES,
    },
    RelationTemplates {
        name: "person state or provinces of residence",
        head: Pool::Person,
        tail: Pool::State,
        plain: &["Among the state or provinces of residence of {h} is {t}.", "{h} is a person with residence in the state of {t}."],
        paraphrase: RESIDENCE_PARAPHRASES,
    },
    RelationTemplates {
        name: "person age",
        head: Pool::Person,
        tail: Pool::Age,
        plain: &["The age of {h} is {t}.", "{h} is a person of age {t}."],
        paraphrase: &["{h}, {t}, spoke first.", "The {t}-year-old {h} declined to comment.", "{h} turned {t} last spring."],
    },
    RelationTemplates {
        name: "organization founded by",
        head: Pool::Org,
        tail: Pool::Person,
        plain: &["The organization {h} was founded by {t}.", "{h} is an organization founded by {t}."],
        paraphrase: &["{t} started {h} in a garage.", "{h} owes its existence to {t}.", "Years ago {t} set up {h} with two friends."],
    },
    RelationTemplates {
        name: "person title",
        head: Pool::Person,
        tail: Pool::Title,
        plain: &["The title of the person {h} is {t}.", "{h} holds the title of {t}."],
        paraphrase: &["{h} works as a {t} these days.", "As a {t}, {h} travels often.", "{h} trained for years to become a {t}."],
    },
    RelationTemplates {
        name: "person employee of",
        head: Pool::Person,
        tail: Pool::Org,
        plain: &["{h} is an employee of {t}.", "The person {h} is employee of {t}."],
        paraphrase: &["{h} draws a salary from {t}.", "{h} joined {t} after graduating.", "At {t}, {h} leads a small team."],
    },
    RelationTemplates {
        name: "organization city of headquarters",
        head: Pool::Org,
        tail: Pool::City,
        plain: &["The city of headquarters of the organization {h} is {t}.", "{h} has its headquarters in the city of {t}."],
        paraphrase: &["{h} runs its main offices out of {t}.", "From a tower in {t}, {h} directs operations.", "{h} is based in {t}."],
    },
    RelationTemplates {
        name: "person spouse",
        head: Pool::Person,
        tail: Pool::Person,
        plain: &["The spouse of {h} is {t}.", "{h} is the person whose spouse is {t}."],
        paraphrase: &["{h} married {t} in June.", "{h} and {t} celebrated their anniversary.", "{h} and her husband {t} arrived together."],
    },
    RelationTemplates {
        name: "person date of death",
        head: Pool::Person,
        tail: Pool::Date,
        plain: &["The date of death of {h} is {t}.", "{h} is a person whose death date was {t}."],
        paraphrase: &["{h} passed away on {t}.", "{h} died peacefully on {t}.", "Mourners gathered after {h} was lost on {t}."],
    },
    RelationTemplates {
        name: "organization number of employees members",
        head: Pool::Org,
        tail: Pool::Count,
        plain: &["The number of employees of the organization {h} is {t}.", "{h} has {t} employees and members."],
        paraphrase: &["{h} now has a staff of {t}.", "Some {t} people work at {h}.", "{h} grew to {t} workers."],
    },
];

/// Relation names in the generated corpus.
pub fn relation_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

/// The planted look-alike pairs.
pub const ANALOGOUS_PAIRS: [(&str, &str); 2] = [
    ("person city of birth", "person state or province of birth"),
    ("person cities of residence", "person state or provinces of residence"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub samples_per_relation: usize,
    /// Share of samples drawn from the plain templates.
    pub plain_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            samples_per_relation: 180,
            plain_fraction: 0.4,
            seed: 7,
        }
    }
}

/// Generate the corpus. Ids are `syn-RR-NNNN`; output is deterministic in the
/// config.
pub fn generate(config: &SyntheticConfig) -> Vec<Sample> {
    let mut out = Vec::with_capacity(TEMPLATES.len() * config.samples_per_relation);
    for (r, spec) in TEMPLATES.iter().enumerate() {
        let mut rng = rng_for(config.seed, &["synthetic".into(), spec.name.into()]);
        let plain_count = (config.samples_per_relation as f64 * config.plain_fraction).round() as usize;
        for i in 0..config.samples_per_relation {
            let templates = if i < plain_count { spec.plain } else { spec.paraphrase };
            let template = templates.choose(&mut rng).copied().unwrap_or("{h} {t}");
            let head = spec.head.values().choose(&mut rng).copied().unwrap_or("X");
            let mut tail = spec.tail.values().choose(&mut rng).copied().unwrap_or("Y");
            while tail == head {
                tail = spec.tail.values().choose(&mut rng).copied().unwrap_or("Y");
            }
            let sentence = template.replace("{h}", head).replace("{t}", tail);
            let mut sample = Sample::new(format!("syn-{r:02}-{i:04}"), sentence, head, tail, spec.name);
            let sentence = &sample.sentence;
            let span = |text: &str| {
                sentence.find(text).map(|byte| {
                    let start = sentence[..byte].chars().count();
                    (start, start + text.chars().count())
                })
            };
            if let (Some(h), Some(t)) = (span(head), span(tail)) {
                sample.head.start = Some(h.0);
                sample.head.end = Some(h.1);
                sample.tail.start = Some(t.0);
                sample.tail.end = Some(t.1);
            }
            out.push(sample);
        }
    }
    out
}
