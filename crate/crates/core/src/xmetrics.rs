//! Explanation-performance scoring: continuous heatmaps against binary
//! ground truth via ROC-AUC (midrank ties), average precision (stable
//! descending sort), and precision at fixed specificity, with per-method
//! aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::Heatmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Abs,
    Raw,
    Pos,
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Abs => "abs",
            Transform::Raw => "raw",
            Transform::Pos => "pos",
        }
    }

    pub fn parse(s: &str) -> Result<Transform> {
        match s {
            "abs" => Ok(Transform::Abs),
            "raw" => Ok(Transform::Raw),
            "pos" => Ok(Transform::Pos),
            _ => Err(Error::Config(format!("unknown score transform '{s}'"))),
        }
    }
}

/// Per-pixel scores under the configured sign handling.
pub fn transform_scores(relevance: &[f32], mode: Transform) -> Vec<f64> {
    relevance
        .iter()
        .map(|&r| {
            let r = r as f64;
            match mode {
                Transform::Abs => r.abs(),
                Transform::Raw => r,
                Transform::Pos => r.max(0.0),
            }
        })
        .collect()
}

/// Scores with binary labels; at least one positive and one negative
/// pixel, or the ranking metrics are undefined.
#[derive(Debug, Clone)]
pub struct ScoredPixels {
    scores: Vec<f64>,
    labels: Vec<u8>,
    positives: usize,
    negatives: usize,
}

impl ScoredPixels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<ScoredPixels> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::Numeric("pixel scores".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Format("pixel labels must be 0 or 1".into()));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let negatives = labels.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::Protocol(format!(
                "metrics undefined: {positives} positive and {negatives} negative pixels"
            )));
        }
        Ok(ScoredPixels { scores, labels, positives, negatives })
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.negatives
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted half (rank-sum formulation with midranks).
pub fn roc_auc(sp: &ScoredPixels) -> f64 {
    let n = sp.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sp.scores[a].partial_cmp(&sp.scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && sp.scores[order[j + 1]] == sp.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if sp.labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = sp.positives as f64;
    let nn = sp.negatives as f64;
    (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * nn)
}

/// Order used by AP and PREC99: score descending, ties broken by the
/// original pixel index ascending.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| a.cmp(&b))
    });
    order
}

/// AP = (1/P) * sum over positive ranks k of precision@k.
pub fn average_precision(sp: &ScoredPixels) -> f64 {
    let order = descending_order(&sp.scores);
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (k, &idx) in order.iter().enumerate() {
        if sp.labels[idx] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / sp.positives as f64
}

/// Precision among pixels at or above the smallest score threshold that
/// keeps the false-positive count within floor((1-specificity)*N).
/// Returns (precision, degenerate); degenerate means no threshold
/// satisfied the budget and the result was pinned to 0.
pub fn precision_at_specificity(sp: &ScoredPixels, specificity: f64) -> (f64, bool) {
    let budget = ((1.0 - specificity) * sp.negatives as f64 + 1e-9).floor() as usize;
    let order = descending_order(&sp.scores);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut best: Option<(usize, usize)> = None;
    let n = order.len();
    let mut i = 0usize;
    while i < n {
        // consume one tie group: a threshold admits whole groups only
        let mut j = i;
        while j + 1 < n && sp.scores[order[j + 1]] == sp.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if sp.labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if fp <= budget {
            best = Some((tp, fp)); // lowest valid threshold so far
        }
        i = j + 1;
    }
    match best {
        Some((tp, fp)) if tp + fp > 0 => (tp as f64 / (tp + fp) as f64, false),
        _ => (0.0, true),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub dataset: String,
    pub method: String,
    pub sample_id: String,
    pub roc_auc: f64,
    pub average_precision: f64,
    pub prec99: f64,
    pub prec99_degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<SampleMetrics>,
    pub transform: Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub roc_auc_mean: f64,
    pub roc_auc_std: f64,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub prec99_mean: f64,
    pub prec99_std: f64,
    pub samples: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    /// Mean and population std per (dataset, method).
    pub fn aggregates(&self) -> BTreeMap<(String, String), Aggregate> {
        let mut groups: BTreeMap<(String, String), Vec<&SampleMetrics>> = BTreeMap::new();
        for row in &self.rows {
            groups
                .entry((row.dataset.clone(), row.method.clone()))
                .or_default()
                .push(row);
        }
        groups
            .into_iter()
            .map(|(key, rows)| {
                let auc: Vec<f64> = rows.iter().map(|r| r.roc_auc).collect();
                let ap: Vec<f64> = rows.iter().map(|r| r.average_precision).collect();
                let pr: Vec<f64> = rows.iter().map(|r| r.prec99).collect();
                let (am, asd) = mean_std(&auc);
                let (pm, psd) = mean_std(&ap);
                let (rm, rsd) = mean_std(&pr);
                (
                    key,
                    Aggregate {
                        roc_auc_mean: am,
                        roc_auc_std: asd,
                        ap_mean: pm,
                        ap_std: psd,
                        prec99_mean: rm,
                        prec99_std: rsd,
                        samples: rows.len(),
                    },
                )
            })
            .collect()
    }
}

/// Score one heatmap per ground truth; every sample must carry a
/// nonempty ground truth (the class-2 evaluation protocol).
pub fn evaluate_heatmaps(
    dataset: &str,
    heatmaps: &[Heatmap],
    ground_truths: &[&[u8]],
    mode: Transform,
) -> Result<MetricsReport> {
    if heatmaps.len() != ground_truths.len() {
        return Err(Error::Shape(format!(
            "{} heatmaps vs {} ground truths",
            heatmaps.len(),
            ground_truths.len()
        )));
    }
    let mut rows = Vec::with_capacity(heatmaps.len());
    for (map, gt) in heatmaps.iter().zip(ground_truths) {
        if gt.iter().all(|&b| b == 0) {
            return Err(Error::Protocol(format!(
                "sample {} has an empty ground truth (class-1 sample in a class-2 protocol)",
                map.sample_id
            )));
        }
        let sp = ScoredPixels::new(transform_scores(&map.relevance, mode), gt.to_vec())?;
        let (prec99, degenerate) = precision_at_specificity(&sp, 0.99);
        rows.push(SampleMetrics {
            dataset: dataset.to_string(),
            method: map.method.clone(),
            sample_id: map.sample_id.clone(),
            roc_auc: roc_auc(&sp),
            average_precision: average_precision(&sp),
            prec99,
            prec99_degenerate: degenerate,
        });
    }
    Ok(MetricsReport { rows, transform: mode })
}

/// `metrics.csv`: a comment header naming the transform and protocol
/// size, then one row per (sample, method).
pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = format!(
        "# transform={} rows={}\n",
        report.transform.name(),
        report.rows.len()
    );
    out.push_str("dataset,method,sample,roc_auc,average_precision,prec99,prec99_degenerate\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dataset,
            r.method,
            r.sample_id,
            r.roc_auc,
            r.average_precision,
            r.prec99,
            u8::from(r.prec99_degenerate)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    let mut transform = Transform::Abs;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            for token in rest.split_whitespace() {
                if let Some(t) = token.strip_prefix("transform=") {
                    transform = Transform::parse(t)?;
                }
            }
            continue;
        }
        if line.starts_with("dataset,") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Format(format!("bad metrics row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad number '{s}'")))
        };
        rows.push(SampleMetrics {
            dataset: parts[0].to_string(),
            method: parts[1].to_string(),
            sample_id: parts[2].to_string(),
            roc_auc: parse(parts[3])?,
            average_precision: parse(parts[4])?,
            prec99: parse(parts[5])?,
            prec99_degenerate: parts[6] == "1",
        });
    }
    Ok(MetricsReport { rows, transform })
}

/// `summary.csv`: mean/std per method per dataset.
pub fn write_summary_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = format!(
        "# transform={} rows={}\n",
        report.transform.name(),
        report.rows.len()
    );
    out.push_str(
        "dataset,method,samples,roc_auc_mean,roc_auc_std,ap_mean,ap_std,prec99_mean,prec99_std\n",
    );
    for ((dataset, method), agg) in report.aggregates() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            dataset,
            method,
            agg.samples,
            agg.roc_auc_mean,
            agg.roc_auc_std,
            agg.ap_mean,
            agg.ap_std,
            agg.prec99_mean,
            agg.prec99_std
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn sp(scores: &[f64], labels: &[u8]) -> ScoredPixels {
        ScoredPixels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    // ------------------------------------------------------------ oracles

    /// O(P*N) pairwise counting: wins + half-ties over all pos-neg pairs.
    fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// O(n^2) rank enumeration with the (score desc, index asc) tie rule.
    fn ap_naive(scores: &[f64], labels: &[u8]) -> f64 {
        let n = scores.len();
        let rank_of = |i: usize| -> usize {
            let mut r = 1;
            for j in 0..n {
                if scores[j] > scores[i] || (scores[j] == scores[i] && j < i) {
                    r += 1;
                }
            }
            r
        };
        let p = labels.iter().filter(|&&l| l == 1).count();
        let mut sum = 0.0;
        for i in 0..n {
            if labels[i] != 1 {
                continue;
            }
            let k = rank_of(i);
            let mut hits = 0usize;
            for j in 0..n {
                if labels[j] == 1 && rank_of(j) <= k {
                    hits += 1;
                }
            }
            sum += hits as f64 / k as f64;
        }
        sum / p as f64
    }

    /// Exhaustive threshold sweep over observed scores.
    fn prec_sweep(scores: &[f64], labels: &[u8], specificity: f64) -> (f64, bool) {
        let n_neg = labels.iter().filter(|&&l| l == 0).count();
        let budget = ((1.0 - specificity) * n_neg as f64 + 1e-9).floor() as usize;
        let mut best_t: Option<f64> = None;
        for &t in scores {
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| **s >= t && **l == 0)
                .count();
            if fp <= budget && best_t.map_or(true, |b| t < b) {
                best_t = Some(t);
            }
        }
        match best_t {
            Some(t) => {
                let tp = scores
                    .iter()
                    .zip(labels)
                    .filter(|(s, l)| **s >= t && **l == 1)
                    .count();
                let fp = scores
                    .iter()
                    .zip(labels)
                    .filter(|(s, l)| **s >= t && **l == 0)
                    .count();
                (tp as f64 / (tp + fp) as f64, false)
            }
            None => (0.0, true),
        }
    }

    fn random_instance(rng: &mut CounterRng, max_n: usize) -> (Vec<f64>, Vec<u8>) {
        let n = 2 + rng.next_below(max_n as u64 - 2) as usize;
        // quantized scores produce heavy ties
        let levels = 1 + rng.next_below(12);
        let scores: Vec<f64> =
            (0..n).map(|_| rng.next_below(levels + 1) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| (rng.next_below(2)) as u8).collect();
        if labels.iter().all(|&l| l == 0) {
            labels[0] = 1;
        }
        if labels.iter().all(|&l| l == 1) {
            labels[0] = 0;
        }
        (scores, labels)
    }

    // ------------------------------------------------------------- tests

    #[test]
    fn transform_modes() {
        assert_eq!(transform_scores(&[-3.0], Transform::Abs), vec![3.0]);
        assert_eq!(transform_scores(&[-3.0], Transform::Pos), vec![0.0]);
        assert_eq!(transform_scores(&[2.0], Transform::Raw), vec![2.0]);
    }

    #[test]
    fn auc_hand_cases() {
        // 4 pos-neg pairs, 3 wins
        let s = sp(&[0.9, 0.8, 0.1, 0.7], &[1, 0, 0, 1]);
        assert_eq!(roc_auc(&s), 0.75);
        // perfect separation
        let s = sp(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0]);
        assert_eq!(roc_auc(&s), 1.0);
        // all ties
        let s = sp(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]);
        assert_eq!(roc_auc(&s), 0.5);
    }

    #[test]
    fn ap_hand_cases() {
        let s = sp(&[0.9, 0.8, 0.1, 0.7], &[1, 0, 0, 1]);
        assert!((average_precision(&s) - 5.0 / 6.0).abs() < 1e-12);
        let s = sp(&[1.0, 0.9, 0.1], &[1, 1, 0]);
        assert_eq!(average_precision(&s), 1.0);
        // single positive ranked last of 100
        let mut scores: Vec<f64> = (0..100).map(|i| 1.0 - i as f64 / 100.0).collect();
        let mut labels = vec![0u8; 100];
        scores[99] = -1.0;
        labels[99] = 1;
        let s = sp(&scores, &labels);
        assert!((average_precision(&s) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn prec99_worked_example() {
        // 100 negatives at 0.00..0.99, positives at 0.995 and 0.55:
        // budget 1, threshold 0.99, predicted {0.995(+), 0.99(-)} -> 0.5
        let mut scores: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let mut labels = vec![0u8; 100];
        scores.push(0.995);
        labels.push(1);
        scores.push(0.55);
        labels.push(1);
        let s = sp(&scores, &labels);
        let (p, degenerate) = precision_at_specificity(&s, 0.99);
        assert_eq!(p, 0.5);
        assert!(!degenerate);
    }

    #[test]
    fn prec99_perfect_and_degenerate() {
        let s = sp(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0]);
        assert_eq!(precision_at_specificity(&s, 0.99), (1.0, false));
        // all scores equal: every threshold admits all N negatives
        let s = sp(&[0.3, 0.3, 0.3, 0.3], &[1, 0, 1, 0]);
        assert_eq!(precision_at_specificity(&s, 0.99), (0.0, true));
    }

    #[test]
    fn matches_brute_force_oracles() {
        let mut rng = CounterRng::new(1234);
        for _ in 0..300 {
            let (scores, labels) = random_instance(&mut rng, 120);
            let s = sp(&scores, &labels);
            let auc = roc_auc(&s);
            let auc_ref = auc_pairwise(&scores, &labels);
            assert!((auc - auc_ref).abs() < 1e-9, "auc {auc} vs {auc_ref}");
            let ap = average_precision(&s);
            let ap_ref = ap_naive(&scores, &labels);
            assert!((ap - ap_ref).abs() < 1e-9, "ap {ap} vs {ap_ref}");
            let (p, d) = precision_at_specificity(&s, 0.99);
            let (p_ref, d_ref) = prec_sweep(&scores, &labels, 0.99);
            assert!((p - p_ref).abs() < 1e-9, "prec {p} vs {p_ref}");
            assert_eq!(d, d_ref);
        }
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let mut rng = CounterRng::new(77);
        for _ in 0..50 {
            let (scores, labels) = random_instance(&mut rng, 80);
            let base = sp(&scores, &labels);
            for f in [|v: f64| v.exp(), |v: f64| 2.0 * v + 5.0] {
                let mapped: Vec<f64> = scores.iter().map(|&v| f(v)).collect();
                let t = sp(&mapped, &labels);
                assert!((roc_auc(&base) - roc_auc(&t)).abs() < 1e-12);
                assert!((average_precision(&base) - average_precision(&t)).abs() < 1e-12);
                let (p0, d0) = precision_at_specificity(&base, 0.99);
                let (p1, d1) = precision_at_specificity(&t, 0.99);
                assert_eq!((p0, d0), (p1, d1));
            }
        }
    }

    #[test]
    fn duplicating_negatives_preserves_auc_and_never_helps_ap() {
        let mut rng = CounterRng::new(88);
        for _ in 0..50 {
            let (scores, labels) = random_instance(&mut rng, 60);
            let base = sp(&scores, &labels);
            let mut s2 = scores.clone();
            let mut l2 = labels.clone();
            for (s, l) in scores.iter().zip(&labels) {
                if *l == 0 {
                    s2.push(*s);
                    l2.push(0);
                }
            }
            let doubled = sp(&s2, &l2);
            assert_eq!(roc_auc(&base), roc_auc(&doubled));
            assert!(average_precision(&doubled) <= average_precision(&base) + 1e-12);
        }
    }

    #[test]
    fn scored_pixels_requires_both_classes() {
        assert!(ScoredPixels::new(vec![0.1, 0.2], vec![1, 1]).is_err());
        assert!(ScoredPixels::new(vec![0.1, 0.2], vec![0, 0]).is_err());
        assert!(ScoredPixels::new(vec![0.1], vec![0, 1]).is_err());
    }

    #[test]
    fn evaluate_rejects_empty_ground_truth() {
        let map = Heatmap {
            height: 2,
            width: 2,
            relevance: vec![0.1, 0.2, 0.3, 0.4],
            method: "gradient".into(),
            target_class: 2,
            sample_id: "h0".into(),
        };
        let gt = [0u8, 0, 0, 0];
        let err = evaluate_heatmaps("perlin", &[map], &[&gt], Transform::Abs).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn identical_heatmaps_aggregate_with_zero_std() {
        let map = Heatmap {
            height: 2,
            width: 2,
            relevance: vec![0.9, 0.1, 0.2, 0.1],
            method: "gradient".into(),
            target_class: 2,
            sample_id: "h0".into(),
        };
        let gt = [1u8, 0, 0, 0];
        let maps: Vec<Heatmap> = (0..10)
            .map(|i| Heatmap { sample_id: format!("h{i}"), ..map.clone() })
            .collect();
        let gts: Vec<&[u8]> = (0..10).map(|_| &gt[..]).collect();
        let report = evaluate_heatmaps("perlin", &maps, &gts, Transform::Abs).unwrap();
        assert_eq!(report.rows.len(), 10);
        let aggs = report.aggregates();
        let agg = &aggs[&("perlin".to_string(), "gradient".to_string())];
        assert_eq!(agg.roc_auc_std, 0.0);
        assert_eq!(agg.ap_std, 0.0);
        assert_eq!(agg.samples, 10);
    }

    #[test]
    fn csv_roundtrip() {
        let report = MetricsReport {
            rows: vec![SampleMetrics {
                dataset: "perlin".into(),
                method: "lrp_z".into(),
                sample_id: "h000003".into(),
                roc_auc: 0.875,
                average_precision: 0.5,
                prec99: 0.25,
                prec99_degenerate: false,
            }],
            transform: Transform::Abs,
        };
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("metrics.csv");
        write_metrics_csv(&report, &m).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        assert!(text.starts_with("# transform=abs"));
        let back = read_metrics_csv(&m).unwrap();
        assert_eq!(back.rows.len(), 1);
        assert_eq!(back.rows[0].roc_auc, 0.875);
        assert_eq!(back.transform, Transform::Abs);
        write_summary_csv(&report, &dir.path().join("summary.csv")).unwrap();
        let s = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(s.contains("perlin,lrp_z,1,0.875,0,0.5,0,0.25,0"));
    }
}
