//! Gallery indexing, cosine ranking and Recall@K / mAP evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::raster::Vector;
use crate::view::View;

/// One embedded image. Used both for gallery entries and for queries.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: String,
    pub class_label: String,
    pub view: View,
    pub embedding: Vector,
}

/// Immutable gallery of unit-norm embeddings, stored in ascending id order.
#[derive(Debug, Clone)]
pub struct GalleryIndex {
    entries: Vec<GalleryEntry>,
    dim: usize,
}

impl GalleryIndex {
    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn classes(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.class_label.as_str()).collect()
    }
}

fn normalized(v: &Vector, id: &str) -> Result<Vector> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroVector { id: id.to_string() });
    }
    Vector::new(v.values().iter().map(|&x| (x as f64 / norm) as f32).collect())
}

pub fn build_index(entries: Vec<GalleryEntry>) -> Result<GalleryIndex> {
    let dim = entries.first().ok_or(Error::EmptyGallery)?.embedding.dim();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for mut e in entries {
        if e.embedding.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: e.embedding.dim(),
            });
        }
        if !seen.insert(e.id.clone()) {
            return Err(Error::DuplicateId(e.id));
        }
        e.embedding = normalized(&e.embedding, &e.id)?;
        out.push(e);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(GalleryIndex { entries: out, dim })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub id: String,
    pub class_label: String,
    pub score: f64,
}

/// Gallery positions in rank order with their cosine scores.
fn ranked_positions(query: &Vector, index: &GalleryIndex) -> Result<Vec<(usize, f64)>> {
    if query.dim() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            found: query.dim(),
        });
    }
    let norm = query.norm();
    let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let mut scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dot: f64 = e
                .embedding
                .values()
                .iter()
                .zip(query.values())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            (i, dot * inv)
        })
        .collect();
    // Stable sort over id-ordered entries: equal scores keep ascending id.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

/// Cosine ranking, best first; ties go to the smaller id.
pub fn rank(query: &Vector, index: &GalleryIndex) -> Result<Vec<Ranked>> {
    Ok(ranked_positions(query, index)?
        .into_iter()
        .map(|(i, score)| {
            let e = &index.entries[i];
            Ranked {
                id: e.id.clone(),
                class_label: e.class_label.clone(),
                score,
            }
        })
        .collect())
}

/// Percentage of evaluated queries plus the positions of excluded ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub percent: f64,
    pub evaluated: usize,
    pub excluded: Vec<usize>,
}

/// Recall@K over ranked class lists. A query whose class never appears in
/// its ranking cannot be evaluated; it is excluded and listed.
pub fn recall_at_k(rankings: &[Vec<Ranked>], truth: &[&str], k: usize) -> Result<Recall> {
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    let mut hits = 0usize;
    let mut evaluated = 0usize;
    let mut excluded = Vec::new();
    for (q, (ranking, class)) in rankings.iter().zip(truth).enumerate() {
        match ranking.iter().position(|r| r.class_label == *class) {
            None => excluded.push(q),
            Some(first) => {
                evaluated += 1;
                if first < k {
                    hits += 1;
                }
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableQueries);
    }
    Ok(Recall {
        percent: percentage(hits, evaluated),
        evaluated,
        excluded,
    })
}

fn percentage(hits: usize, total: usize) -> f64 {
    hits as f64 * 100.0 / total as f64
}

/// Average precision of one ranking given per-rank relevance flags, or
/// `None` when nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, _) in relevant.iter().enumerate().filter(|(_, &r)| r) {
        found += 1;
        sum += found as f64 / (i + 1) as f64;
    }
    (found > 0).then(|| sum / found as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub query_view: View,
    pub gallery_view: View,
    /// K -> Recall@K as a percentage.
    pub recall_at: BTreeMap<usize, f64>,
    /// Mean average precision as a percentage.
    pub mean_ap: f64,
    pub num_queries: usize,
    /// Ids of queries with no positive in the gallery.
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn direction(&self) -> String {
        format!("{}->{}", self.query_view, self.gallery_view)
    }

    pub fn header(&self) -> String {
        let mut s = String::new();
        for k in self.recall_at.keys() {
            let _ = write!(s, "{:>8}", format!("R@{k}"));
        }
        let _ = write!(s, "{:>8}", "mAP");
        s
    }

    pub fn row(&self) -> String {
        let mut s = String::new();
        for v in self.recall_at.values() {
            let _ = write!(s, "{v:>8.2}");
        }
        let _ = write!(s, "{:>8.2}", self.mean_ap);
        s
    }

    /// Aligned text table with one row.
    pub fn table(&self) -> String {
        format!(
            "{:<20}{}\n{:<20}{}\n",
            "direction",
            self.header(),
            self.direction(),
            self.row()
        )
    }

    /// One `key=value` record per metric.
    pub fn records(&self) -> String {
        let mut s = String::new();
        let dir = self.direction();
        for (k, v) in &self.recall_at {
            let _ = writeln!(s, "direction={dir} metric=R@{k} value={v:.4} queries={}", self.num_queries);
        }
        let _ = writeln!(
            s,
            "direction={dir} metric=mAP value={:.4} queries={}",
            self.mean_ap, self.num_queries
        );
        s
    }
}

/// Ranks every query against the gallery and reports Recall@K for each K in
/// `ks` and mAP. A gallery entry with the query's own id is left out of that
/// query's ranking.
pub fn evaluate(
    queries: &[GalleryEntry],
    index: &GalleryIndex,
    ks: &[usize],
    exec: Execution,
) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::InvalidConfig("no K values given".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidK(k));
    }
    let gallery_classes = index.classes();
    // Position of the first relevant item and the AP, per evaluable query.
    let per_query = exec.try_map(queries, |q| -> Result<Option<(usize, f64)>> {
        if !gallery_classes.contains(q.class_label.as_str()) {
            return Ok(None);
        }
        let relevant: Vec<bool> = ranked_positions(&q.embedding, index)?
            .into_iter()
            .map(|(i, _)| &index.entries[i])
            .filter(|e| e.id != q.id)
            .map(|e| e.class_label == q.class_label)
            .collect();
        let first = relevant.iter().position(|&r| r);
        Ok(first.zip(average_precision(&relevant)))
    })?;

    let mut excluded = Vec::new();
    let mut scored = Vec::new();
    for (q, outcome) in queries.iter().zip(per_query) {
        match outcome {
            Some(v) => scored.push(v),
            None => excluded.push(q.id.clone()),
        }
    }
    if scored.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    let n = scored.len();
    let recall_at = ks
        .iter()
        .map(|&k| (k, percentage(scored.iter().filter(|(first, _)| *first < k).count(), n)))
        .collect();
    let ap_sum: f64 = scored.iter().map(|(_, ap)| ap).sum();
    Ok(EvalReport {
        query_view: queries.iter().map(|q| q.view).next().unwrap_or(View::Other),
        gallery_view: index.entries.first().map_or(View::Other, |e| e.view),
        recall_at,
        mean_ap: ap_sum / n as f64 * 100.0,
        num_queries: n,
        excluded,
    })
}

fn check_field(field: &str, what: &str) -> Result<()> {
    if field.is_empty() || field.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!(
            "{what} {field:?} must be non-empty without tabs or newlines"
        )));
    }
    Ok(())
}

/// Embedding file: one line per entry, `id \t class \t view \t v1,v2,...`.
/// Values use the shortest representation that parses back exactly.
pub fn format_embeddings(entries: &[GalleryEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        check_field(&e.id, "id")?;
        check_field(&e.class_label, "class label")?;
        let _ = write!(s, "{}\t{}\t{}\t", e.id, e.class_label, e.view);
        for (i, v) in e.embedding.values().iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<Vec<GalleryEntry>> {
    let bad = |line: usize, reason: String| Error::Record {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, class, view, values] = fields[..] else {
            return Err(bad(line_no, format!("expected 4 fields, found {}", fields.len())));
        };
        let view: View = view.parse().map_err(|e: Error| bad(line_no, e.to_string()))?;
        let values = if values.is_empty() {
            Vec::new()
        } else {
            values
                .split(',')
                .map(|v| v.parse::<f32>().map_err(|e| bad(line_no, format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?
        };
        let embedding = Vector::new(values).map_err(|e| bad(line_no, e.to_string()))?;
        out.push(GalleryEntry {
            id: id.to_string(),
            class_label: class.to_string(),
            view,
            embedding,
        });
    }
    Ok(out)
}

pub fn write_embeddings(entries: &[GalleryEntry], path: &Path) -> Result<()> {
    let text = format_embeddings(entries)?;
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<GalleryEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_embeddings(&text, path)
}
