//! Relevance judgments, task definitions and mean average precision.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::rank::RankedList;
use crate::error::{Error, Result};

/// Per-query relevance labels, with an optional group per query for
/// macro-averaged reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    groups: BTreeMap<String, String>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\t', '\n', '\r', ','])
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `label` to the judgment of `video` for `query`.
    pub fn insert(&mut self, query: &str, video: &str, label: &str) {
        self.judgments
            .entry(query.to_string())
            .or_default()
            .entry(video.to_string())
            .or_default()
            .insert(label.to_string());
    }

    pub fn set_query_group(&mut self, query: &str, group: &str) {
        self.groups.insert(query.to_string(), group.to_string());
    }

    pub fn query_group(&self, query: &str) -> Option<&str> {
        self.groups.get(query).map(String::as_str)
    }

    /// Every query with at least one judgment or a group.
    pub fn queries(&self) -> BTreeSet<&str> {
        self.judgments
            .keys()
            .chain(self.groups.keys())
            .map(String::as_str)
            .collect()
    }

    pub fn labels(&self, query: &str, video: &str) -> Option<&BTreeSet<String>> {
        self.judgments.get(query)?.get(video)
    }

    /// Every label used anywhere.
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.judgments
            .values()
            .flat_map(|m| m.values())
            .flatten()
            .map(String::as_str)
            .collect()
    }

    /// Videos judged for `query` with at least one of `labels`.
    pub fn positives(&self, query: &str, labels: &[&str]) -> BTreeSet<&str> {
        self.judgments
            .get(query)
            .into_iter()
            .flatten()
            .filter(|(_, l)| l.iter().any(|x| labels.contains(&x.as_str())))
            .map(|(v, _)| v.as_str())
            .collect()
    }

    /// Parses `query<TAB>video<TAB>label[<TAB>group]` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut qrels = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = || format!("{source}:{}", n + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&fields.len()) || !fields[..3].iter().all(|f| valid_token(f)) {
                return Err(Error::parse(loc(), "expected query, video, label[, group]"));
            }
            qrels.insert(fields[0], fields[1], fields[2]);
            if let Some(&g) = fields.get(3) {
                if !valid_token(g) {
                    return Err(Error::parse(loc(), "empty group"));
                }
                match qrels.groups.get(fields[0]) {
                    Some(old) if old != g => {
                        return Err(Error::parse(loc(), format!("query group changes from {old:?} to {g:?}")))
                    }
                    _ => qrels.set_query_group(fields[0], g),
                }
            }
        }
        Ok(qrels)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Serialises in the format read by [`Qrels::parse`]; the group of a query
    /// is repeated on each of its lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, videos) in &self.judgments {
            let group = self.groups.get(q);
            for (v, labels) in videos {
                for l in labels {
                    let _ = write!(out, "{q}\t{v}\t{l}");
                    if let Some(g) = group {
                        let _ = write!(out, "\t{g}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Which labels count as relevant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub labels: Vec<String>,
}

impl Task {
    pub fn new(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            labels: labels.iter().map(|l| l.to_string()).collect(),
        }
    }

    /// Every label present in `qrels` is relevant.
    pub fn any_label(qrels: &Qrels) -> Self {
        Self {
            name: "all".to_string(),
            labels: qrels.vocabulary().into_iter().map(String::from).collect(),
        }
    }

    fn label_refs(&self) -> Vec<&str> {
        self.labels.iter().map(String::as_str).collect()
    }
}

/// Parses `task_name<TAB>label1,label2,...` lines.
pub fn parse_tasks(text: &str, source: &str) -> Result<Vec<Task>> {
    let mut tasks: Vec<Task> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{source}:{}", n + 1);
        let (name, labels) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&loc, "expected task name and label list"))?;
        let labels: Vec<&str> = labels.split(',').map(str::trim).collect();
        if !valid_token(name) || labels.iter().any(|l| !valid_token(l)) {
            return Err(Error::parse(&loc, "empty task name or label"));
        }
        if tasks.iter().any(|t| t.name == name) {
            return Err(Error::parse(&loc, format!("duplicate task {name:?}")));
        }
        tasks.push(Task::new(name, &labels));
    }
    Ok(tasks)
}

pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tasks(&text, &path.display().to_string())
}

/// Average precision with every judged positive in the denominator, so
/// positives missing from the ranking count as misses.
pub fn average_precision<'a>(ranked: impl IntoIterator<Item = &'a str>, positives: &BTreeSet<&str>) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.into_iter().enumerate() {
        if positives.contains(id) && seen.insert(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / positives.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    /// Mean AP over evaluated queries.
    pub map: f64,
    /// AP per evaluated query, in ranking order.
    pub per_query: Vec<(String, f64)>,
    /// Queries skipped because the task gives them no positives.
    pub excluded: Vec<String>,
    /// Queries with positives but an empty ranking (scored 0).
    pub empty: Vec<String>,
    /// Mean AP per query group, when the qrels carry groups.
    pub per_group: Vec<(String, f64)>,
    /// Mean of `per_group`.
    pub macro_map: Option<f64>,
}

pub fn mean_average_precision(rankings: &[RankedList], qrels: &Qrels, task: &Task) -> Result<EvalReport> {
    let labels = task.label_refs();
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    let mut empty = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for list in rankings {
        let positives = qrels.positives(&list.query_id, &labels);
        if positives.is_empty() {
            excluded.push(list.query_id.clone());
            continue;
        }
        if list.items.is_empty() {
            log::warn!("query {:?} has positives but an empty ranking", list.query_id);
            empty.push(list.query_id.clone());
        }
        let ap = average_precision(list.ids(), &positives);
        if let Some(g) = qrels.query_group(&list.query_id) {
            groups.entry(g).or_default().push(ap);
        }
        per_query.push((list.query_id.clone(), ap));
    }
    if per_query.is_empty() {
        return Err(Error::Empty("evaluated queries"));
    }
    let map = per_query.iter().map(|(_, ap)| ap).sum::<f64>() / per_query.len() as f64;
    let per_group: Vec<(String, f64)> = groups
        .into_iter()
        .map(|(g, aps)| (g.to_string(), aps.iter().sum::<f64>() / aps.len() as f64))
        .collect();
    let macro_map = (!per_group.is_empty())
        .then(|| per_group.iter().map(|(_, m)| m).sum::<f64>() / per_group.len() as f64);
    Ok(EvalReport {
        task: task.name.clone(),
        map,
        per_query,
        excluded,
        empty,
        per_group,
        macro_map,
    })
}
