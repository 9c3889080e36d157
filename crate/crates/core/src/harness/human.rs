use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{HarnessError, RecordScores};

/// Upper end of the 0–5 rating scale.
pub const MAX_SCORE: u8 = 5;

/// One annotator's rating of one system's summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanScore {
    pub annotator: String,
    pub summary_id: String,
    pub system: String,
    pub accuracy: u8,
    pub coherence: u8,
    /// Unix time in milliseconds.
    #[serde(default)]
    pub timestamp: u64,
}

impl HumanScore {
    pub fn key(&self) -> (String, String, String) {
        (
            self.annotator.clone(),
            self.summary_id.clone(),
            self.system.clone(),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.annotator.trim().is_empty() {
            return Err("annotator is empty".into());
        }
        if self.summary_id.is_empty() {
            return Err("summary_id is empty".into());
        }
        if self.accuracy > MAX_SCORE {
            return Err(format!("accuracy {} is outside 0..={MAX_SCORE}", self.accuracy));
        }
        if self.coherence > MAX_SCORE {
            return Err(format!("coherence {} is outside 0..={MAX_SCORE}", self.coherence));
        }
        Ok(())
    }
}

/// Reads a score log (one JSON object per line). Out-of-range values are
/// reported with their line index.
pub fn read_scores<R: BufRead>(r: R) -> Result<Vec<HumanScore>, HarnessError> {
    let mut out = Vec::new();
    for (index, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: HumanScore =
            serde_json::from_str(&line).map_err(|e| HarnessError::InvalidScore {
                index,
                message: e.to_string(),
            })?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryHumanScore {
    pub summary_id: String,
    pub system: String,
    pub mean_accuracy: f64,
    pub mean_coherence: f64,
    pub annotators: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemHumanScore {
    pub system: String,
    /// Mean over summaries of the per-summary means.
    pub mean_accuracy: f64,
    pub mean_coherence: f64,
    pub summaries: usize,
}

/// Automatic and human scores side by side for one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub summary_id: String,
    pub system: String,
    pub rouge1_f: Option<f64>,
    pub rouge2_f: Option<f64>,
    pub rougel_f: Option<f64>,
    pub embed_f: Option<f64>,
    pub accuracy: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HumanReport {
    pub per_summary: Vec<SummaryHumanScore>,
    pub per_system: Vec<SystemHumanScore>,
    pub comparison: Vec<ComparisonRow>,
}

impl HumanReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20}{:<20}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
            "summary", "system", "R-1", "R-L", "B-S", "acc", "coh"
        );
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        for r in &self.comparison {
            out.push_str(&format!(
                "{:<20}{:<20}{:>8}{:>8}{:>8}{:>8.2}{:>8.2}\n",
                r.summary_id,
                r.system,
                pct(r.rouge1_f),
                pct(r.rougel_f),
                pct(r.embed_f),
                r.accuracy,
                r.coherence
            ));
        }
        for s in &self.per_system {
            out.push_str(&format!(
                "{:<20}{:<20}{:>8}{:>8}{:>8}{:>8.2}{:>8.2}\n",
                "(all)", s.system, "", "", "", s.mean_accuracy, s.mean_coherence
            ));
        }
        out
    }

    /// Comparison matrix as CSV for external plotting. Metric columns are
    /// on a 0–1 scale, human columns on 0–5; missing values are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("summary_id,system,rouge1_f,rouge2_f,rougel_f,embed_f,accuracy,coherence\n");
        for r in &self.comparison {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&r.summary_id),
                csv_field(&r.system),
                cell(r.rouge1_f),
                cell(r.rouge2_f),
                cell(r.rougel_f),
                cell(r.embed_f),
                r.accuracy,
                r.coherence
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Groups ratings per (summary, system) and per system, and joins them
/// with automatic per-record scores given as `(system, scores)`.
pub fn aggregate_human_eval(
    scores: &[HumanScore],
    automatic: &[(String, RecordScores)],
) -> Result<HumanReport, HarnessError> {
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<(String, String), Vec<&HumanScore>> = BTreeMap::new();
    for (index, s) in scores.iter().enumerate() {
        s.validate()
            .map_err(|message| HarnessError::InvalidScore { index, message })?;
        if !seen.insert(s.key()) {
            return Err(HarnessError::DuplicateScore {
                annotator: s.annotator.clone(),
                summary_id: s.summary_id.clone(),
                system: s.system.clone(),
            });
        }
        groups
            .entry((s.summary_id.clone(), s.system.clone()))
            .or_default()
            .push(s);
    }
    let per_summary: Vec<SummaryHumanScore> = groups
        .into_iter()
        .map(|((summary_id, system), v)| {
            let n = v.len() as f64;
            SummaryHumanScore {
                summary_id,
                system,
                mean_accuracy: v.iter().map(|s| s.accuracy as f64).sum::<f64>() / n,
                mean_coherence: v.iter().map(|s| s.coherence as f64).sum::<f64>() / n,
                annotators: v.len(),
            }
        })
        .collect();

    let mut by_system: BTreeMap<&str, Vec<&SummaryHumanScore>> = BTreeMap::new();
    for s in &per_summary {
        by_system.entry(s.system.as_str()).or_default().push(s);
    }
    let per_system = by_system
        .into_iter()
        .map(|(system, v)| {
            let n = v.len() as f64;
            SystemHumanScore {
                system: system.to_string(),
                mean_accuracy: v.iter().map(|s| s.mean_accuracy).sum::<f64>() / n,
                mean_coherence: v.iter().map(|s| s.mean_coherence).sum::<f64>() / n,
                summaries: v.len(),
            }
        })
        .collect();

    let auto: BTreeMap<(&str, &str), &RecordScores> = automatic
        .iter()
        .map(|(system, r)| ((r.id.as_str(), system.as_str()), r))
        .collect();
    let comparison = per_summary
        .iter()
        .map(|s| {
            let a = auto.get(&(s.summary_id.as_str(), s.system.as_str()));
            ComparisonRow {
                summary_id: s.summary_id.clone(),
                system: s.system.clone(),
                rouge1_f: a.map(|r| r.r1.f1),
                rouge2_f: a.map(|r| r.r2.f1),
                rougel_f: a.map(|r| r.rl.f1),
                embed_f: a.map(|r| r.embed.f1),
                accuracy: s.mean_accuracy,
                coherence: s.mean_coherence,
            }
        })
        .collect();
    Ok(HumanReport {
        per_summary,
        per_system,
        comparison,
    })
}

/// Picks `count` record ids spread evenly over the ROUGE-1 F ranking, so
/// high, middle and low scorers are all represented.
pub fn stratified_sample(per_record: &[RecordScores], count: usize) -> Vec<String> {
    let mut ranked: Vec<&RecordScores> = per_record.iter().collect();
    ranked.sort_by(|a, b| b.r1.f1.total_cmp(&a.r1.f1).then_with(|| a.id.cmp(&b.id)));
    let n = ranked.len();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if count >= n {
        return ranked.into_iter().map(|r| r.id.clone()).collect();
    }
    if count == 1 {
        return vec![ranked[(n - 1) / 2].id.clone()];
    }
    (0..count)
        .map(|i| ranked[i * (n - 1) / (count - 1)].id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ScoreTriple;

    fn score(annotator: &str, sid: &str, system: &str, a: u8, c: u8) -> HumanScore {
        HumanScore {
            annotator: annotator.into(),
            summary_id: sid.into(),
            system: system.into(),
            accuracy: a,
            coherence: c,
            timestamp: 0,
        }
    }

    fn auto(id: &str, f: f64) -> RecordScores {
        let t = ScoreTriple::from_pr(f, f);
        RecordScores {
            id: id.into(),
            r1: t,
            r2: t,
            rl: t,
            embed: t,
        }
    }

    #[test]
    fn means_by_hand() {
        let scores = [score("u1", "s1", "sys", 4, 5), score("u2", "s1", "sys", 5, 5)];
        let r = aggregate_human_eval(&scores, &[("sys".into(), auto("s1", 0.5))]).unwrap();
        assert_eq!(r.per_summary[0].mean_accuracy, 4.5);
        assert_eq!(r.per_summary[0].mean_coherence, 5.0);
        assert_eq!(r.per_summary[0].annotators, 2);
        assert_eq!(r.per_system[0].mean_accuracy, 4.5);
        assert_eq!(r.comparison[0].rouge1_f, Some(0.5));
        assert!(r.to_csv().starts_with("summary_id,system"));
        assert!(r.to_table().contains("s1"));
    }

    #[test]
    fn system_means_average_summaries() {
        let scores = [
            score("u1", "s1", "a", 2, 2),
            score("u2", "s1", "a", 4, 4),
            score("u1", "s2", "a", 0, 1),
        ];
        let r = aggregate_human_eval(&scores, &[]).unwrap();
        assert_eq!(r.per_system[0].mean_accuracy, (3.0 + 0.0) / 2.0);
        assert_eq!(r.per_system[0].mean_coherence, (3.0 + 1.0) / 2.0);
        assert_eq!(r.comparison[0].embed_f, None);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            aggregate_human_eval(&[score("u", "s", "x", 6, 0)], &[]),
            Err(HarnessError::InvalidScore { index: 0, .. })
        ));
        assert!(matches!(
            aggregate_human_eval(&[score("u", "s", "x", 1, 1), score("u", "s", "x", 2, 2)], &[]),
            Err(HarnessError::DuplicateScore { .. })
        ));
        assert_eq!(aggregate_human_eval(&[], &[]).unwrap(), HumanReport::default());
    }

    #[test]
    fn score_log_parsing() {
        let line = serde_json::to_string(&score("u", "s", "x", 3, 4)).unwrap();
        let parsed = read_scores(format!("{line}\n\n{line}\n").as_bytes()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], score("u", "s", "x", 3, 4));
        assert!(read_scores("{\"annotator\":1}".as_bytes()).is_err());
    }

    #[test]
    fn stratified() {
        let recs: Vec<RecordScores> = (0..10).map(|i| auto(&format!("r{i}"), i as f64 / 10.0)).collect();
        assert_eq!(stratified_sample(&recs, 3), vec!["r9", "r5", "r0"]);
        assert_eq!(stratified_sample(&recs, 20).len(), 10);
        assert!(stratified_sample(&recs, 0).is_empty());
    }
}
