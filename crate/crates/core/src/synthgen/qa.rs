use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Episode, Event, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaCategory {
    After,
    Before,
    First,
    Last,
    Binary,
}

impl QaCategory {
    pub const ALL: [QaCategory; 5] = [Self::After, Self::Before, Self::First, Self::Last, Self::Binary];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::After => "after",
            Self::Before => "before",
            Self::First => "first",
            Self::Last => "last",
            Self::Binary => "binary",
        }
    }

    pub fn is_binary(self) -> bool {
        self == Self::Binary
    }
}

impl fmt::Display for QaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The label space: every (verb, object) pair in verb-major order, then
/// `yes` and `no`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    answers: Vec<String>,
}

impl AnswerSet {
    pub fn for_world(world: &WorldSpec) -> Self {
        let mut answers: Vec<String> = (0..world.num_events())
            .map(|i| world.event_name(Event::from_index(i, world)))
            .collect();
        answers.push("yes".into());
        answers.push("no".into());
        Self { answers }
    }

    pub fn from_answers(answers: Vec<String>) -> Self {
        Self { answers }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn yes(&self) -> usize {
        self.answers.len() - 2
    }

    pub fn no(&self) -> usize {
        self.answers.len() - 1
    }

    pub fn label(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }

    /// Whitespace tokens of the answer string for `label`.
    pub fn tokens(&self, label: usize) -> Vec<&str> {
        self.answers[label].split_whitespace().collect()
    }
}

/// A question before it is attached to a video id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaDraft {
    pub tokens: Vec<String>,
    pub answer_label: usize,
    pub category: QaCategory,
}

/// One line of `qa.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub video_id: String,
    pub question_tokens: Vec<String>,
    pub answer_label: usize,
    pub category: QaCategory,
    /// Name of the video tensor in `frames.bin`.
    pub frames_ref: String,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn event_words(world: &WorldSpec, e: Event) -> Vec<String> {
    let mut w = words(&world.verbs[e.verb]);
    w.push("the".into());
    w.push(world.objects[e.object].clone());
    w
}

fn relative_question(world: &WorldSpec, marker: &str, e: Event) -> Vec<String> {
    let mut t = words("what did the person do");
    t.push(marker.into());
    t.extend(event_words(world, e));
    t
}

/// Questions about one episode. Categories cycle from a random start so a
/// dataset is balanced across them; `after`/`before` only ask about events
/// that occur once, and fall back to `binary` when none qualifies.
pub fn generate_qa<R: Rng + ?Sized>(ep: &Episode, world: &WorldSpec, count: usize, rng: &mut R) -> Vec<QaDraft> {
    let answers = AnswerSet::for_world(world);
    let k = ep.events.len();
    let unique = |i: usize| ep.events.iter().filter(|&&e| e == ep.events[i]).count() == 1;
    let after_ok: Vec<usize> = (0..k.saturating_sub(1)).filter(|&i| unique(i)).collect();
    let before_ok: Vec<usize> = (1..k).filter(|&i| unique(i)).collect();
    let start = rng.gen_range(0..QaCategory::ALL.len());
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut cat = QaCategory::ALL[(start + j) % QaCategory::ALL.len()];
        if (cat == QaCategory::After && after_ok.is_empty()) || (cat == QaCategory::Before && before_ok.is_empty()) {
            cat = QaCategory::Binary;
        }
        let draft = match cat {
            QaCategory::After => {
                let i = *after_ok.choose(rng).expect("nonempty");
                QaDraft {
                    tokens: relative_question(world, "after", ep.events[i]),
                    answer_label: ep.events[i + 1].index(world),
                    category: cat,
                }
            }
            QaCategory::Before => {
                let i = *before_ok.choose(rng).expect("nonempty");
                QaDraft {
                    tokens: relative_question(world, "before", ep.events[i]),
                    answer_label: ep.events[i - 1].index(world),
                    category: cat,
                }
            }
            QaCategory::First | QaCategory::Last => {
                let (word, e) = if cat == QaCategory::First {
                    ("first", ep.events[0])
                } else {
                    ("last", ep.events[k - 1])
                };
                QaDraft {
                    tokens: words(&format!("what was the {word} action")),
                    answer_label: e.index(world),
                    category: cat,
                }
            }
            QaCategory::Binary => {
                let absent: Vec<usize> = (0..world.num_events())
                    .filter(|&i| ep.events.iter().all(|e| e.index(world) != i))
                    .collect();
                let (e, label) = if absent.is_empty() || rng.gen_bool(0.5) {
                    (*ep.events.choose(rng).expect("k >= 1"), answers.yes())
                } else {
                    (Event::from_index(*absent.choose(rng).expect("nonempty"), world), answers.no())
                };
                let mut tokens = words("did the person");
                tokens.extend(event_words(world, e));
                QaDraft {
                    tokens,
                    answer_label: label,
                    category: cat,
                }
            }
        };
        out.push(draft);
    }
    out
}

/// Recompute the answer of a generated question by reading its text and
/// scanning the episode. `None` if the question does not parse or is
/// ambiguous.
pub fn answer_from_episode(ep: &Episode, world: &WorldSpec, tokens: &[String]) -> Option<usize> {
    let text = tokens.join(" ");
    let answers = AnswerSet::for_world(world);
    let names: Vec<String> = ep.events.iter().map(|&e| world.event_name(e)).collect();
    let parse_event = |s: &str| -> Option<String> {
        let s = s.trim();
        let (verb, object) = s.rsplit_once(" the ")?;
        Some(format!("{verb} {object}"))
    };
    let label_of = |name: &str| answers.label(name);
    if let Some(rest) = text.strip_prefix("what did the person do after ") {
        let target = parse_event(rest)?;
        let hits: Vec<usize> = (0..names.len()).filter(|&i| names[i] == target).collect();
        match hits.as_slice() {
            [i] if i + 1 < names.len() => label_of(&names[i + 1]),
            _ => None,
        }
    } else if let Some(rest) = text.strip_prefix("what did the person do before ") {
        let target = parse_event(rest)?;
        let hits: Vec<usize> = (0..names.len()).filter(|&i| names[i] == target).collect();
        match hits.as_slice() {
            [i] if *i > 0 => label_of(&names[i - 1]),
            _ => None,
        }
    } else if text == "what was the first action" {
        label_of(names.first()?)
    } else if text == "what was the last action" {
        label_of(names.last()?)
    } else if let Some(rest) = text.strip_prefix("did the person ") {
        let target = parse_event(rest)?;
        label_of(&target)?;
        Some(if names.contains(&target) {
            answers.yes()
        } else {
            answers.no()
        })
    } else {
        None
    }
}
