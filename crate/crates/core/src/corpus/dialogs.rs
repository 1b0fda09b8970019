use std::collections::{HashMap, HashSet};

use chrono::Duration;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::{Dialog, Role, Turn, TwcsRecord};
use crate::text::{preprocess, NormalizationRules};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub records: usize,
    pub dialogs: usize,
    /// Records whose parent tweet is absent from the dump.
    pub orphan_chains: usize,
    /// Records that sit on a reply cycle.
    pub cyclic_records: usize,
    /// Conversations started by a company account rather than a customer.
    pub non_customer_roots: usize,
    /// Chains without a turn from the configured support account.
    pub other_accounts: usize,
    /// Chains shorter than two turns.
    pub too_short: usize,
    /// Chains cut where a reply predates its parent.
    pub truncated_out_of_order: usize,
}

#[derive(Clone, Copy)]
enum Reach {
    Root,
    Orphan,
    Cycle,
}

/// Follows reply chains into linear dialogs.
///
/// Each customer tweet without a parent starts a dialog; from there the
/// earliest reply (by timestamp, then id) is followed until the chain ends.
/// Only dialogs with at least one turn by `support_account` (compared
/// case-insensitively) are kept; `None` keeps every account.
pub fn build_dialogs(
    records: &[TwcsRecord],
    support_account: Option<&str>,
    rules: &NormalizationRules,
) -> (Vec<Dialog>, BuildSummary) {
    let mut summary = BuildSummary {
        records: records.len(),
        ..BuildSummary::default()
    };
    let by_id: HashMap<&str, &TwcsRecord> =
        records.iter().map(|r| (r.tweet_id.as_str(), r)).collect();

    // Classify every record by where its parent chain leads.
    let mut reach: HashMap<&str, Reach> = HashMap::new();
    for r in records {
        let mut path = Vec::new();
        let mut seen = HashSet::new();
        let mut cur = r;
        let verdict = loop {
            if let Some(done) = reach.get(cur.tweet_id.as_str()) {
                break match done {
                    Reach::Root => Reach::Root,
                    Reach::Orphan => Reach::Orphan,
                    Reach::Cycle => Reach::Cycle,
                };
            }
            if !seen.insert(cur.tweet_id.as_str()) {
                break Reach::Cycle;
            }
            path.push(cur.tweet_id.as_str());
            match &cur.in_response_to {
                None => break Reach::Root,
                Some(p) => match by_id.get(p.as_str()) {
                    Some(parent) => cur = parent,
                    None => {
                        summary.orphan_chains += 1;
                        break Reach::Orphan;
                    }
                },
            }
        };
        for id in path {
            reach.insert(id, verdict);
        }
    }
    summary.cyclic_records = reach.values().filter(|v| matches!(v, Reach::Cycle)).count();

    let mut children: HashMap<&str, Vec<&TwcsRecord>> = HashMap::new();
    for r in records {
        if let Some(p) = &r.in_response_to {
            if matches!(reach.get(r.tweet_id.as_str()), Some(Reach::Root)) {
                children.entry(p.as_str()).or_default().push(r);
            }
        }
    }
    for kids in children.values_mut() {
        kids.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.tweet_id.cmp(&b.tweet_id))
        });
    }

    let mut roots: Vec<&TwcsRecord> = records
        .iter()
        .filter(|r| r.in_response_to.is_none())
        .collect();
    roots.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.tweet_id.cmp(&b.tweet_id))
    });

    let mut dialogs = Vec::new();
    for root in roots {
        if !root.inbound {
            summary.non_customer_roots += 1;
            continue;
        }
        let mut chain = vec![root];
        while let Some(next) = children
            .get(chain.last().unwrap().tweet_id.as_str())
            .and_then(|k| k.first())
        {
            if next.created_at < chain.last().unwrap().created_at {
                summary.truncated_out_of_order += 1;
                break;
            }
            chain.push(next);
        }
        if chain.len() < 2 {
            summary.too_short += 1;
            continue;
        }
        if let Some(account) = support_account {
            let involved = chain
                .iter()
                .any(|r| !r.inbound && r.author_id.eq_ignore_ascii_case(account));
            if !involved {
                summary.other_accounts += 1;
                continue;
            }
        }
        let turns = chain
            .iter()
            .map(|r| Turn {
                tweet_id: r.tweet_id.clone(),
                role: if r.inbound { Role::Customer } else { Role::Support },
                author: r.author_id.clone(),
                timestamp: r.created_at,
                text: r.text.clone(),
                tokens: preprocess(&r.text, rules),
            })
            .collect();
        dialogs.push(Dialog {
            dialog_id: root.tweet_id.clone(),
            turns,
        });
    }
    summary.dialogs = dialogs.len();
    (dialogs, summary)
}

/// Default patterns for turns that only move the conversation elsewhere.
pub const DEFAULT_REDIRECT_PATTERNS: &[&str] = &[
    r"\bDMs?\b",
    r"\bdirect(?:ly)?\s+messages?\b",
    r"\bprivate\s+messages?\b",
    r"\bfollow\s+(?:us\s+)?and\s+DM\b",
    r"\bsend\s+us\s+a\s+(?:private\s+|direct\s+)?message\b",
];

/// Case-insensitive patterns matched against raw turn text.
#[derive(Clone, Debug)]
pub struct RedirectFilter {
    patterns: Vec<Regex>,
}

impl Default for RedirectFilter {
    fn default() -> Self {
        Self::new(DEFAULT_REDIRECT_PATTERNS.iter().copied()).expect("default patterns compile")
    }
}

impl RedirectFilter {
    pub fn new<'a>(patterns: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                RegexBuilder::new(p)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| Error::Config(format!("redirect pattern {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { patterns })
    }

    pub fn matches(&self, text: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(text))
    }
}

/// Drops redirecting turns, then dialogs left with fewer than two turns.
/// Returns the surviving dialogs and the number of turns removed.
pub fn filter_redirects(dialogs: Vec<Dialog>, filter: &RedirectFilter) -> (Vec<Dialog>, usize) {
    let mut removed = 0;
    let kept = dialogs
        .into_iter()
        .filter_map(|mut d| {
            let before = d.turns.len();
            d.turns.retain(|t| !filter.matches(&t.text));
            removed += before - d.turns.len();
            (d.turns.len() >= 2).then_some(d)
        })
        .collect();
    (kept, removed)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

/// Time-based split on dialog start times.
///
/// With `end` the latest start, the test window is `[end - test_days, end]`.
/// Training keeps dialogs that start within `train_days` before the test
/// window opens; anything older is dropped.
pub fn time_split(dialogs: Vec<Dialog>, train_days: i64, test_days: i64) -> Split {
    let Some(end) = dialogs.iter().map(Dialog::start).max() else {
        return Split::default();
    };
    let test_start = end - Duration::days(test_days);
    let train_start = test_start - Duration::days(train_days);
    let mut split = Split::default();
    for d in dialogs {
        let t = d.start();
        if t >= test_start {
            split.test.push(d);
        } else if t >= train_start {
            split.train.push(d);
        }
    }
    split
}
