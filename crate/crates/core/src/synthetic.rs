//! Planted-structure corpus generator.
//!
//! Each dialog is one customer question and one support reply. Questions are
//! drawn from templates: a template contributes one of its topic words and
//! the rest of the question is filler shared by every template. The reply is
//! the template's fixed answer.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TwcsRecord;
use crate::{seeds, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub templates: usize,
    /// Topic words per template; each question uses one of them.
    pub topic_words: usize,
    /// Template-specific words in each answer.
    pub answer_words: usize,
    /// Answer words shared by all templates.
    pub common_words: usize,
    /// Common words placed in each answer.
    pub answer_common: usize,
    pub fillers: usize,
    pub question_fillers: usize,
    pub days: i64,
    pub support_account: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 500,
            templates: 25,
            topic_words: 2,
            answer_words: 3,
            common_words: 15,
            answer_common: 4,
            fillers: 60,
            question_fillers: 6,
            days: 65,
            support_account: "AcmeSupport".into(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn vocab_size(&self) -> usize {
        self.templates * (self.topic_words + self.answer_words) + self.common_words + self.fillers
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.pairs == 0 || self.templates == 0 || self.topic_words == 0 || self.days <= 0 {
            return bad("pairs, templates, topic_words and days must be positive");
        }
        if self.question_fillers > self.fillers {
            return bad("question_fillers exceeds fillers");
        }
        if self.answer_common > self.common_words {
            return bad("answer_common exceeds common_words");
        }
        if self.answer_words + self.answer_common == 0 {
            return bad("answers would be empty");
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aiou";

/// Distinct three-syllable pseudo-words.
fn word(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    (0..3)
        .map(|k| {
            let s = (i / n.pow(k)) % n;
            format!("{}{}", CONSONANTS[s % CONSONANTS.len()] as char, VOWELS[s / CONSONANTS.len()] as char)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub topic: Vec<String>,
    pub answer: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub templates: Vec<Template>,
    pub fillers: Vec<String>,
    pub records: Vec<TwcsRecord>,
    /// Template of each dialog, keyed by the customer tweet id.
    pub template_of: BTreeMap<String, usize>,
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2017, 10, 1, 0, 0, 0).unwrap()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = seeds::rng(config.seed, "synthetic");
    let mut words = (0..config.vocab_size()).map(word);
    let mut take = |n: usize| -> Vec<String> { words.by_ref().take(n).collect() };
    let fillers = take(config.fillers);
    let common = take(config.common_words);
    let templates: Vec<Template> = (0..config.templates)
        .map(|_| {
            let topic = take(config.topic_words);
            let mut answer = take(config.answer_words);
            answer.extend(common.choose_multiple(&mut rng, config.answer_common).cloned());
            answer.shuffle(&mut rng);
            Template { topic, answer }
        })
        .collect();

    let span = config.days * 86_400;
    let mut starts: Vec<i64> = (0..config.pairs).map(|_| rng.random_range(0..span)).collect();
    starts.sort_unstable();
    let mut records = Vec::with_capacity(2 * config.pairs);
    let mut template_of = BTreeMap::new();
    for (k, start) in starts.into_iter().enumerate() {
        let t = rng.random_range(0..templates.len());
        let mut question: Vec<&str> = fillers
            .choose_multiple(&mut rng, config.question_fillers)
            .map(String::as_str)
            .collect();
        question.push(templates[t].topic.choose(&mut rng).expect("topic words"));
        question.shuffle(&mut rng);
        let asked = epoch() + Duration::seconds(start);
        let (qid, aid) = (format!("{}", 2 * k + 1), format!("{}", 2 * k + 2));
        records.push(TwcsRecord {
            tweet_id: qid.clone(),
            author_id: format!("c{k}"),
            inbound: true,
            created_at: asked,
            text: question.join(" "),
            in_response_to: None,
        });
        records.push(TwcsRecord {
            tweet_id: aid,
            author_id: config.support_account.clone(),
            inbound: false,
            created_at: asked + Duration::seconds(rng.random_range(60..1800)),
            text: templates[t].answer.join(" "),
            in_response_to: Some(qid.clone()),
        });
        template_of.insert(qid, t);
    }
    Ok(SyntheticCorpus {
        templates,
        fillers,
        records,
        template_of,
    })
}
