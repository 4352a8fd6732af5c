//! Accuracy and retrieval metrics, and the shape-complexity indicator.

use std::io::Write;

use crate::error::{Error, Result};
use crate::inference::{self, GalleryItem, Ranked, ShapePrediction};
use crate::trainer::argmax;

fn check_pairs(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Fraction of predictions equal to their label.
pub fn instance_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Mean over classes of the per-class instance accuracy. Every class in
/// `0..classes` must occur among the labels.
pub fn class_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_pairs(predictions, labels)?;
    let mut total = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        for index in [p, l] {
            if index >= classes {
                return Err(Error::ClassOutOfRange { index, classes });
            }
        }
        total[l] += 1;
        correct[l] += usize::from(p == l);
    }
    if let Some(c) = total.iter().position(|&t| t == 0) {
        return Err(Error::ClassAbsent(c));
    }
    let sum: f64 = correct.iter().zip(&total).map(|(&c, &t)| c as f64 / t as f64).sum();
    Ok(sum / classes as f64)
}

/// `(1/gtp) Σ_k P@k · rel@k` over a ranked relevance list.
pub fn average_precision(relevant: &[bool], gtp: usize) -> Result<f64> {
    if gtp == 0 {
        return Err(Error::EmptyInput("ground-truth positives"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / gtp as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::EmptyInput("retrieval queries"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub ranking: Vec<Ranked>,
    pub relevant: Vec<bool>,
    /// `None` when no other gallery item shares the query's label.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub map: f64,
    pub queries: Vec<QueryResult>,
}

/// Every item queries the rest of the set; relevance means equal labels.
/// Queries without any relevant item have no AP and are left out of the mean.
pub fn retrieval_map(items: &[GalleryItem]) -> Result<RetrievalReport> {
    let mut queries = Vec::with_capacity(items.len());
    let mut aps = Vec::new();
    for (qi, query) in items.iter().enumerate() {
        let gallery: Vec<GalleryItem> = items
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != qi)
            .map(|(_, g)| g.clone())
            .collect();
        let mut ranking = inference::retrieve(&query.descriptor, &gallery, gallery.len())?;
        let relevant: Vec<bool> = ranking.iter().map(|r| gallery[r.index].label == query.label).collect();
        // report positions in the full item list
        for r in &mut ranking {
            r.index += usize::from(r.index >= qi);
        }
        let gtp = relevant.iter().filter(|&&r| r).count();
        let ap = if gtp > 0 { Some(average_precision(&relevant, gtp)?) } else { None };
        aps.extend(ap);
        queries.push(QueryResult { query_id: query.id.clone(), ranking, relevant, ap });
    }
    Ok(RetrievalReport { map: mean_average_precision(&aps)?, queries })
}

/// Writes `query_id,rank,gallery_id,distance,relevant` with 1-based ranks.
pub fn write_rankings<W: Write>(mut out: W, report: &RetrievalReport) -> std::io::Result<()> {
    writeln!(out, "query_id,rank,gallery_id,distance,relevant")?;
    for q in &report.queries {
        for (k, (r, rel)) in q.ranking.iter().zip(&q.relevant).enumerate() {
            writeln!(out, "{},{},{},{},{}", q.query_id, k + 1, r.id, r.distance, u8::from(*rel))?;
        }
    }
    Ok(())
}

/// L2 norm of the per-class variance across walks.
pub fn cross_walk_variance(probs: &[Vec<f64>]) -> Result<f64> {
    let first = probs.first().ok_or(Error::EmptyInput("walk predictions"))?;
    if probs.iter().any(|p| p.len() != first.len()) {
        return Err(Error::ShapeMismatch("walk predictions differ in width".into()));
    }
    let m = probs.len() as f64;
    let mut norm2 = 0.0;
    for c in 0..first.len() {
        let mean = probs.iter().map(|p| p[c]).sum::<f64>() / m;
        let var = probs.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>() / m;
        norm2 += var * var;
    }
    Ok(norm2.sqrt())
}

/// `−ln` of the top-class probability; 0 for a one-hot vector.
pub fn walk_entropy(probs: &[f64]) -> f64 {
    -probs[argmax(probs)].ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityStats {
    pub cloud_id: String,
    pub var_cw: f64,
    /// Mean walk entropy over the shape's walks.
    pub ce_mean: f64,
    pub correct: bool,
}

impl ComplexityStats {
    pub fn from_prediction(pred: &ShapePrediction, label: usize) -> Result<Self> {
        let ce = pred.probs.iter().map(|p| walk_entropy(p)).sum::<f64>() / pred.probs.len() as f64;
        Ok(ComplexityStats {
            cloud_id: pred.cloud_id.clone(),
            var_cw: cross_walk_variance(&pred.probs)?,
            ce_mean: ce,
            correct: pred.class == label,
        })
    }
}

/// `var_cw = a · ce + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorLine {
    pub a: f64,
    pub b: f64,
}

pub const LINE_GRID: usize = 64;

/// 1 iff the shape lies strictly above the line.
pub fn complexity_indicator(stats: &ComplexityStats, line: &IndicatorLine) -> u8 {
    u8::from(stats.var_cw > line.a * stats.ce_mean + line.b)
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Candidate slopes: log-spaced over the range of positive `var/ce` ratios.
/// A single ratio is widened by a decade each way; no usable ratio at all
/// falls back to `[1e-6, 1]`.
fn slope_grid(stats: &[ComplexityStats]) -> Vec<f64> {
    let ratios = stats
        .iter()
        .filter(|s| s.ce_mean > 0.0 && s.var_cw > 0.0)
        .map(|s| s.var_cw / s.ce_mean)
        .filter(|r| r.is_finite());
    let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if !lo.is_finite() {
        log_space(1e-6, 1.0, LINE_GRID)
    } else if lo == hi {
        log_space(lo * 0.1, hi * 10.0, LINE_GRID)
    } else {
        log_space(lo, hi, LINE_GRID)
    }
}

/// Grid search for the line above which correct and incorrect training shapes
/// are most nearly balanced. Only lines with at least one shape above compete
/// unless no grid line has any. Remaining ties prefer more shapes above, then
/// the smaller slope, then the smaller intercept.
pub fn fit_indicator_line(stats: &[ComplexityStats]) -> Result<IndicatorLine> {
    let any_correct = stats.iter().any(|s| s.correct);
    let any_wrong = stats.iter().any(|s| !s.correct);
    if !(any_correct && any_wrong) {
        return Err(Error::DegenerateStats);
    }
    let (vmin, vmax) = stats
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.var_cw), hi.max(s.var_cw)));
    let intercepts = lin_space(vmin, vmax, LINE_GRID);
    // key: (empty above, imbalance, -above)
    let mut best: Option<((bool, usize, isize), IndicatorLine)> = None;
    for &a in &slope_grid(stats) {
        for &b in &intercepts {
            let line = IndicatorLine { a, b };
            let (mut good, mut bad) = (0usize, 0usize);
            for s in stats.iter().filter(|s| complexity_indicator(s, &line) == 1) {
                if s.correct {
                    good += 1;
                } else {
                    bad += 1;
                }
            }
            let above = good + bad;
            let key = (above == 0, good.abs_diff(bad), -(above as isize));
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, line));
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Writes `cloud_id,var_cw,ce_mean,correct,f`.
pub fn write_complexity<W: Write>(
    mut out: W,
    stats: &[ComplexityStats],
    line: &IndicatorLine,
) -> std::io::Result<()> {
    writeln!(out, "cloud_id,var_cw,ce_mean,correct,f")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.cloud_id,
            s.var_cw,
            s.ce_mean,
            u8::from(s.correct),
            complexity_indicator(s, line)
        )?;
    }
    Ok(())
}

/// Misclassification rates among shapes with `f = 1` and with `f = 0`;
/// `None` for an empty group.
pub fn error_rates_by_indicator(stats: &[ComplexityStats], line: &IndicatorLine) -> (Option<f64>, Option<f64>) {
    let rate = |flag: u8| {
        let group: Vec<_> = stats.iter().filter(|s| complexity_indicator(s, line) == flag).collect();
        (!group.is_empty()).then(|| group.iter().filter(|s| !s.correct).count() as f64 / group.len() as f64)
    };
    (rate(1), rate(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(ce: f64, var: f64, correct: bool) -> ComplexityStats {
        ComplexityStats { cloud_id: String::new(), var_cw: var, ce_mean: ce, correct }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(instance_accuracy(&[0, 1, 2, 2], &[0, 1, 2, 3]).unwrap(), 0.75);
        assert_eq!(instance_accuracy(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(instance_accuracy(&[0, 1, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(instance_accuracy(&[], &[]).is_err());
        assert!(instance_accuracy(&[0], &[0, 1]).is_err());

        assert_eq!(class_accuracy(&[0, 1, 1], &[0, 0, 1], 2).unwrap(), 0.75);
        assert_eq!(class_accuracy(&[1, 0], &[0, 1], 2).unwrap(), 0.0);
        assert!(matches!(class_accuracy(&[0, 0], &[0, 0], 2), Err(Error::ClassAbsent(1))));
        assert!(matches!(class_accuracy(&[3], &[0], 2), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn precision_examples() {
        let ap = average_precision(&[true, false, true, false], 2).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(average_precision(&[true, true, false], 2).unwrap(), 1.0);
        assert!((average_precision(&[false, false, true], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(average_precision(&[true], 0).is_err());
        assert_eq!(mean_average_precision(&[0.4]).unwrap(), 0.4);
        assert_eq!(mean_average_precision(&[1.0, 0.5]).unwrap(), 0.75);
        assert!(mean_average_precision(&[]).is_err());
    }

    #[test]
    fn retrieval_excludes_the_query() {
        let item = |id: &str, d: [f64; 2], label| GalleryItem { id: id.into(), descriptor: d.to_vec(), label };
        let items = [item("a", [1.0, 0.0], 0), item("b", [0.9, 0.1], 0), item("c", [0.0, 1.0], 1), item("d", [0.5, 0.5], 1)];
        let report = retrieval_map(&items).unwrap();
        let a = &report.queries[0];
        assert!(a.ranking.iter().all(|r| r.id != "a"));
        assert_eq!(a.ranking.iter().map(|r| r.index).collect::<Vec<_>>(), [1, 3, 2]);
        assert_eq!(a.ap, Some(1.0));
        // d: ranks b (0.4·√2), a, c (both 0.5·√2, tie by id)
        let d = &report.queries[3];
        assert_eq!(d.ranking.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["b", "a", "c"]);
        assert_eq!(d.ap, Some(1.0 / 3.0));
        let mut buf = Vec::new();
        write_rankings(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("query_id,rank,gallery_id,distance,relevant\na,1,b,"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
    }

    #[test]
    fn variance_and_entropy_examples() {
        assert_eq!(cross_walk_variance(&vec![vec![0.3, 0.7]; 4]).unwrap(), 0.0);
        assert_eq!(cross_walk_variance(&[vec![0.3, 0.7]]).unwrap(), 0.0);
        let v = cross_walk_variance(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((v - 0.125f64.sqrt()).abs() < 1e-15);
        assert!(cross_walk_variance(&[]).is_err());

        assert_eq!(walk_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((walk_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((walk_entropy(&[0.5, 0.3, 0.2]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn indicator_boundary() {
        let line = IndicatorLine { a: 1.0, b: 0.0 };
        assert_eq!(complexity_indicator(&stat(1.0, 2.0, true), &line), 1);
        assert_eq!(complexity_indicator(&stat(1.0, 1.0, true), &line), 0);
        for b in [0.0, 0.3] {
            assert_eq!(complexity_indicator(&stat(0.7, 0.0, true), &IndicatorLine { a: 2.0, b }), 0);
        }
    }

    #[test]
    fn two_point_fit_separates_the_pair() {
        let stats = [stat(0.0, 0.0, true), stat(1.0, 1.0, false)];
        let line = fit_indicator_line(&stats).unwrap();
        assert_eq!(complexity_indicator(&stats[0], &line), 0);
        assert_eq!(complexity_indicator(&stats[1], &line), 1);
        // exhaustive check of the grid: no line does better than imbalance 1
        // without leaving every shape below it
        let slopes = slope_grid(&stats);
        let intercepts = lin_space(0.0, 1.0, LINE_GRID);
        for &a in &slopes {
            for &b in &intercepts {
                let l = IndicatorLine { a, b };
                let f: Vec<_> = stats.iter().map(|s| complexity_indicator(s, &l)).collect();
                assert!(f == [0, 0] || f == [0, 1]);
            }
        }
    }

    #[test]
    fn identical_stats_do_not_crash() {
        let stats = [stat(0.5, 0.2, true), stat(0.5, 0.2, false), stat(0.5, 0.2, true)];
        let line = fit_indicator_line(&stats).unwrap();
        assert!(line.a.is_finite() && line.b.is_finite());
        assert!(matches!(fit_indicator_line(&[stat(1.0, 1.0, true)]), Err(Error::DegenerateStats)));
        assert!(matches!(fit_indicator_line(&[stat(1.0, 1.0, false)]), Err(Error::DegenerateStats)));
    }

    #[test]
    fn fit_finds_the_noisy_corner() {
        // confident, consistent shapes are right; high-variance ones are a coin flip
        let mut stats = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            stats.push(stat(0.05 + 0.1 * t, 0.01 + 0.02 * t, true));
        }
        for i in 0..10 {
            let t = i as f64 / 10.0;
            stats.push(stat(0.6 + 0.2 * t, 0.3 + 0.1 * t, i % 2 == 0));
        }
        let line = fit_indicator_line(&stats).unwrap();
        let (hi, lo) = error_rates_by_indicator(&stats, &line);
        assert!(hi.unwrap() > lo.unwrap_or(0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn prob_vectors() -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
            (2usize..6).prop_flat_map(|c| {
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), 1..10).prop_map(|raw| {
                    raw.into_iter()
                        .map(|mut v| {
                            v[0] += 1e-3;
                            let s: f64 = v.iter().sum();
                            v.into_iter().map(|x| x / s).collect()
                        })
                        .collect()
                })
            })
        }

        proptest! {
            #[test]
            fn variance_is_bounded_and_symmetric(probs in prob_vectors()) {
                let v = cross_walk_variance(&probs).unwrap();
                let c = probs[0].len() as f64;
                prop_assert!(v >= 0.0 && v <= c.sqrt() / 2.0);
                let mut rev = probs.clone();
                rev.reverse();
                prop_assert!((cross_walk_variance(&rev).unwrap() - v).abs() < 1e-12);
            }

            #[test]
            fn entropy_in_range(probs in prob_vectors()) {
                for p in &probs {
                    let e = walk_entropy(p);
                    prop_assert!(e >= 0.0 && e <= (p.len() as f64).ln() + 1e-12);
                }
            }

            #[test]
            fn perfect_ranking_has_unit_map(labels in prop::collection::vec(0usize..3, 2..20)) {
                // descriptors are one-hot on the label, so same-label items sit at distance 0
                let items: Vec<_> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| {
                        let mut d = vec![0.0; 3];
                        d[l] = 1.0;
                        GalleryItem { id: format!("{i:02}"), descriptor: d, label: l }
                    })
                    .collect();
                match retrieval_map(&items) {
                    Ok(r) => prop_assert_eq!(r.map, 1.0),
                    Err(e) => prop_assert!(matches!(e, Error::EmptyInput(_))),
                }
            }

            #[test]
            fn indicator_is_monotone_in_variance(
                ce in 0.0f64..3.0, var in 0.0f64..1.0, extra in 0.0f64..1.0,
                a in 0.0f64..2.0, b in -1.0f64..1.0,
            ) {
                let line = IndicatorLine { a, b };
                let lo = complexity_indicator(&stat(ce, var, true), &line);
                let hi = complexity_indicator(&stat(ce, var + extra, true), &line);
                prop_assert!(hi >= lo);
            }

            #[test]
            fn class_accuracy_equals_instance_accuracy_when_balanced(
                preds in prop::collection::vec(0usize..3, 3),
                reps in 1usize..5,
            ) {
                let labels: Vec<_> = (0..3).flat_map(|c| std::iter::repeat_n(c, reps)).collect();
                let first = [preds[0], preds[1], preds[2]];
                let p: Vec<_> = (0..3).flat_map(|c| (0..reps).map(move |r| if r == 0 { first[c] } else { c })).collect();
                let ia = instance_accuracy(&p, &labels).unwrap();
                let ca = class_accuracy(&p, &labels, 3).unwrap();
                prop_assert!((ia - ca).abs() < 1e-12);
            }
        }
    }
}
