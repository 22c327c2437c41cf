//! Two-alternative forced-choice study aggregation with Thurstone Case V
//! maximum-likelihood scores.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

const CDF_FLOOR: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("winner {winner:?} is neither {a:?} nor {b:?}")]
    UnknownWinner { a: String, b: String, winner: String },
    #[error("method {0:?} is compared with itself")]
    SelfComparison(String),
    #[error("need at least two methods, got {0}")]
    TooFewMethods(usize),
    #[error("method {0:?} never appears in a comparison")]
    Uncompared(String),
    #[error("comparison graph is disconnected: {components:?}")]
    Disconnected { components: Vec<Vec<String>> },
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("matrix is not square or has a nonzero diagonal")]
    BadMatrix,
    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One 2AFC judgement between two methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyVote {
    pub method_i: String,
    pub method_j: String,
    pub winner: String,
}

/// `counts[i][j]`: how often method `i` was preferred over method `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    pub methods: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl PreferenceMatrix {
    pub fn new(methods: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, StudyError> {
        let m = methods.len();
        if counts.len() != m || counts.iter().enumerate().any(|(i, r)| r.len() != m || r[i] != 0) {
            return Err(StudyError::BadMatrix);
        }
        Ok(Self { methods, counts })
    }
}

/// Accumulates votes into a matrix over the lexicographically sorted method names.
pub fn build_matrix(votes: &[StudyVote]) -> Result<PreferenceMatrix, StudyError> {
    for v in votes {
        if v.method_i == v.method_j {
            return Err(StudyError::SelfComparison(v.method_i.clone()));
        }
        if v.winner != v.method_i && v.winner != v.method_j {
            return Err(StudyError::UnknownWinner {
                a: v.method_i.clone(),
                b: v.method_j.clone(),
                winner: v.winner.clone(),
            });
        }
    }
    let names: BTreeSet<&str> = votes.iter().flat_map(|v| [v.method_i.as_str(), v.method_j.as_str()]).collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let m = names.len();
    let mut counts = vec![vec![0u64; m]; m];
    for v in votes {
        let loser = if v.winner == v.method_i { &v.method_j } else { &v.method_i };
        counts[index[v.winner.as_str()]][index[loser.as_str()]] += 1;
    }
    Ok(PreferenceMatrix {
        methods: names.into_iter().map(String::from).collect(),
        counts,
    })
}

/// Reads `method_i,method_j,winner` rows; a header row with those names is skipped.
pub fn read_votes_csv(reader: impl Read) -> Result<Vec<StudyVote>, StudyError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| StudyError::Csv {
            line: e.position().map_or(i as u64 + 1, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() != 3 {
            return Err(StudyError::Csv {
                line,
                reason: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        if i == 0 && &rec[0] == "method_i" && &rec[1] == "method_j" && &rec[2] == "winner" {
            continue;
        }
        out.push(StudyVote {
            method_i: rec[0].to_string(),
            method_j: rec[1].to_string(),
            winner: rec[2].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScores {
    /// Scores in matrix method order, summing to zero; higher is better.
    pub q: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn log_likelihood(c: &[Vec<u64>], q: &[f64]) -> f64 {
    let mut l = 0.0;
    for (i, row) in c.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            if n > 0 {
                l += n as f64 * std_normal_cdf(q[i] - q[j]).clamp(CDF_FLOOR, 1.0 - CDF_FLOOR).ln();
            }
        }
    }
    l
}

/// Gradient of the log-likelihood, projected onto the zero-sum plane.
fn gradient(c: &[Vec<u64>], q: &[f64]) -> Vec<f64> {
    let m = q.len();
    let mut g = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let n = c[i][j];
            if n == 0 {
                continue;
            }
            let d = q[i] - q[j];
            let p = std_normal_cdf(d);
            if p <= CDF_FLOOR || p >= 1.0 - CDF_FLOOR {
                continue; // clamped: flat
            }
            let t = n as f64 * std_normal_pdf(d) / p;
            g[i] += t;
            g[j] -= t;
        }
    }
    let mean = g.iter().sum::<f64>() / m as f64;
    g.iter_mut().for_each(|v| *v -= mean);
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn grad_norm(c: &[Vec<u64>], q: &[f64]) -> f64 {
    norm(&gradient(c, q))
}

/// Solves `(-H + 11^T/m) p = g`, the Newton step restricted to the zero-sum plane.
/// `None` when the curvature is degenerate or the step is not an ascent direction.
fn newton_direction(c: &[Vec<u64>], q: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let m = q.len();
    let mut a = DMatrix::from_element(m, m, 1.0 / m as f64);
    for i in 0..m {
        for j in 0..m {
            let n = c[i][j];
            if n == 0 {
                continue;
            }
            let d = q[i] - q[j];
            let p = std_normal_cdf(d);
            if p <= CDF_FLOOR || p >= 1.0 - CDF_FLOOR {
                continue;
            }
            let r = std_normal_pdf(d) / p;
            let w = n as f64 * r * (r + d);
            a[(i, i)] += w;
            a[(j, j)] += w;
            a[(i, j)] -= w;
            a[(j, i)] -= w;
        }
    }
    let p = a.cholesky()?.solve(&DVector::from_column_slice(g));
    let slope: f64 = p.iter().zip(g).map(|(x, y)| x * y).sum();
    (slope > 0.0 && p.iter().all(|v| v.is_finite())).then(|| p.iter().copied().collect())
}

fn check_connected(matrix: &PreferenceMatrix) -> Result<(), StudyError> {
    let m = matrix.methods.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..m {
        let total: u64 = (0..m).map(|j| matrix.counts[i][j] + matrix.counts[j][i]).sum();
        if total == 0 {
            return Err(StudyError::Uncompared(matrix.methods[i].clone()));
        }
        for j in 0..m {
            if matrix.counts[i][j] + matrix.counts[j][i] > 0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..m {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(matrix.methods[i].clone());
    }
    if comps.len() > 1 {
        return Err(StudyError::Disconnected {
            components: comps.into_values().collect(),
        });
    }
    Ok(())
}

/// Maximum-likelihood Thurstone Case V scores by projected ascent with Armijo
/// backtracking, starting from `q = 0`. Steps are Newton-preconditioned where
/// the curvature allows and plain gradient steps otherwise.
pub fn thurstone_scores(matrix: &PreferenceMatrix) -> Result<GlobalScores, StudyError> {
    thurstone_from(matrix, vec![0.0; matrix.methods.len()])
}

/// As [`thurstone_scores`] from a given starting point (projected to zero sum).
pub fn thurstone_from(matrix: &PreferenceMatrix, mut q: Vec<f64>) -> Result<GlobalScores, StudyError> {
    let m = matrix.methods.len();
    if m < 2 {
        return Err(StudyError::TooFewMethods(m));
    }
    if q.len() != m {
        return Err(StudyError::BadMatrix);
    }
    check_connected(matrix)?;
    let c = &matrix.counts;
    let mean = q.iter().sum::<f64>() / m as f64;
    q.iter_mut().for_each(|v| *v -= mean);

    let mut l = log_likelihood(c, &q);
    for it in 0..MAX_ITERS {
        let g = gradient(c, &q);
        let gn = norm(&g);
        if gn < GRAD_TOL {
            return Ok(GlobalScores {
                q,
                log_likelihood: l,
                iterations: it,
                gradient_norm: gn,
            });
        }
        let dir = newton_direction(c, &q, &g).unwrap_or_else(|| g.clone());
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut step = 1.0;
        loop {
            let cand: Vec<f64> = q.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let lc = log_likelihood(c, &cand);
            // near the optimum the gain drops below the round-off of `l`;
            // a full step that shrinks the gradient is then accepted
            let flat = step == 1.0 && (lc - l).abs() <= 1e-12 * l.abs().max(1.0) && grad_norm(c, &cand) < gn;
            if lc >= l + 1e-4 * step * slope || flat {
                q = cand;
                l = lc;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                // no ascent possible along the direction: numerically stationary
                return Ok(GlobalScores {
                    q,
                    log_likelihood: l,
                    iterations: it,
                    gradient_norm: gn,
                });
            }
        }
        // keep the zero-sum anchor exact despite round-off
        let mean = q.iter().sum::<f64>() / m as f64;
        q.iter_mut().for_each(|v| *v -= mean);
    }
    let gradient_norm = grad_norm(c, &q);
    Err(StudyError::NotConverged {
        iterations: MAX_ITERS,
        gradient_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub matrix: PreferenceMatrix,
    pub scores: GlobalScores,
}

pub const SCORES_CSV: &str = "scores.csv";
pub const REPORT_JSON: &str = "report.json";

/// Writes `scores.csv` (method, q; descending q, ties by name) and `report.json` into `out_dir`.
pub fn export_report(scores: &GlobalScores, matrix: &PreferenceMatrix, out_dir: impl AsRef<Path>) -> Result<(), StudyError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut order: Vec<usize> = (0..matrix.methods.len()).collect();
    order.sort_by(|&a, &b| scores.q[b].total_cmp(&scores.q[a]).then_with(|| matrix.methods[a].cmp(&matrix.methods[b])));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "q"]).map_err(|e| std::io::Error::other(e.to_string()))?;
    for i in order {
        w.write_record([matrix.methods[i].as_str(), &format!("{:.6}", scores.q[i])])
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    std::fs::write(dir.join(SCORES_CSV), bytes)?;
    let report = StudyReport {
        matrix: matrix.clone(),
        scores: scores.clone(),
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(dir.join(REPORT_JSON), json)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<StudyReport, StudyError> {
    let report: StudyReport = serde_json::from_slice(&std::fs::read(path)?)?;
    PreferenceMatrix::new(report.matrix.methods.clone(), report.matrix.counts.clone())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn vote(a: &str, b: &str, w: &str) -> StudyVote {
        StudyVote {
            method_i: a.into(),
            method_j: b.into(),
            winner: w.into(),
        }
    }

    fn two(c12: u64, c21: u64) -> PreferenceMatrix {
        PreferenceMatrix::new(vec!["a".into(), "b".into()], vec![vec![0, c12], vec![c21, 0]]).unwrap()
    }

    #[test]
    fn matrix_counts_and_permutation() {
        let votes = vec![vote("x", "y", "x"), vote("y", "x", "x"), vote("x", "y", "x"), vote("z", "y", "y")];
        let m = build_matrix(&votes).unwrap();
        assert_eq!(m.methods, vec!["x", "y", "z"]);
        assert_eq!(m.counts[0][1], 3);
        assert_eq!(m.counts[1][0], 0);
        assert_eq!(m.counts[1][2], 1);
        let mut rev = votes.clone();
        rev.reverse();
        assert_eq!(build_matrix(&rev).unwrap(), m);
        assert_eq!(build_matrix(&[]).unwrap().counts.len(), 0);
        assert!(matches!(build_matrix(&[vote("x", "y", "q")]), Err(StudyError::UnknownWinner { .. })));
    }

    #[test]
    fn two_method_closed_form() {
        let s = thurstone_scores(&two(75, 25)).unwrap();
        let expected = Normal::standard().inverse_cdf(0.75);
        assert!((s.q[0] - s.q[1] - expected).abs() < 1e-4);
        assert!((expected - 0.6745).abs() < 1e-4);
        assert!(s.q.iter().sum::<f64>().abs() < 1e-9);
        // brute-force grid over the difference agrees
        let best = (0..20001)
            .map(|k| -2.0 + k as f64 * 2e-4)
            .max_by(|a, b| log_likelihood(&two(75, 25).counts, &[*a, 0.0]).total_cmp(&log_likelihood(&two(75, 25).counts, &[*b, 0.0])))
            .unwrap();
        assert!((best - (s.q[0] - s.q[1])).abs() < 3e-4);
    }

    #[test]
    fn closed_form_over_many_counts() {
        let normal = Normal::standard();
        for c12 in [1u64, 2, 5, 13, 40] {
            for c21 in [1u64, 3, 7, 40] {
                let s = thurstone_scores(&two(c12, c21)).unwrap();
                let expected = normal.inverse_cdf(c12 as f64 / (c12 + c21) as f64);
                assert!((s.q[0] - s.q[1] - expected).abs() < 1e-4, "{c12}/{c21}");
            }
        }
    }

    #[test]
    fn symmetric_matrix_gives_zero() {
        let counts = vec![vec![0, 4, 2], vec![4, 0, 7], vec![2, 7, 0]];
        let m = PreferenceMatrix::new(vec!["a".into(), "b".into(), "c".into()], counts).unwrap();
        let s = thurstone_scores(&m).unwrap();
        assert!(s.q.iter().all(|v| v.abs() < 1e-6));
    }

    fn random_matrix(m: usize, rng: &mut SeededRng) -> PreferenceMatrix {
        let mut counts = vec![vec![0u64; m]; m];
        for (i, row) in counts.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                if i != j {
                    *c = 1 + rng.index(20) as u64;
                }
            }
        }
        PreferenceMatrix::new((0..m).map(|i| format!("m{i}")).collect(), counts).unwrap()
    }

    #[test]
    fn scaling_counts_changes_nothing() {
        let mut rng = SeededRng::new(1);
        let m = random_matrix(5, &mut rng);
        let mut scaled = m.clone();
        scaled.counts.iter_mut().flatten().for_each(|c| *c *= 10);
        let (a, b) = (thurstone_scores(&m).unwrap(), thurstone_scores(&scaled).unwrap());
        for (x, y) in a.q.iter().zip(&b.q) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn restarts_agree() {
        let mut rng = SeededRng::new(2);
        let m = random_matrix(6, &mut rng);
        let a = thurstone_scores(&m).unwrap();
        let start: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let b = thurstone_from(&m, start).unwrap();
        for (x, y) in a.q.iter().zip(&b.q) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn extra_win_does_not_lower_the_gap() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10 {
            let m = random_matrix(4, &mut rng);
            let (i, j) = (rng.index(4), rng.index(4));
            if i == j {
                continue;
            }
            let base = thurstone_scores(&m).unwrap();
            let mut more = m.clone();
            more.counts[i][j] += 1;
            let bumped = thurstone_scores(&more).unwrap();
            assert!(bumped.q[i] - bumped.q[j] >= base.q[i] - base.q[j] - 1e-9);
        }
    }

    #[test]
    fn disconnected_graph_lists_components() {
        let counts = vec![vec![0, 1, 0, 0], vec![1, 0, 0, 0], vec![0, 0, 0, 2], vec![0, 0, 1, 0]];
        let m = PreferenceMatrix::new(["a", "b", "c", "d"].map(String::from).to_vec(), counts).unwrap();
        match thurstone_scores(&m) {
            Err(StudyError::Disconnected { components }) => {
                assert_eq!(components, vec![vec!["a", "b"], vec!["c", "d"]]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(thurstone_scores(&two(0, 0)), Err(StudyError::Uncompared(_))));
    }

    #[test]
    fn perfect_separation_is_bounded() {
        let s = thurstone_scores(&two(30, 0)).unwrap();
        assert!(s.q[0] > s.q[1] && s.q.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn csv_input_and_report_round_trip() {
        let text = "method_i,method_j,winner\nours,base,ours\nbase,ours,ours\nours,base,base\n";
        let votes = read_votes_csv(text.as_bytes()).unwrap();
        assert_eq!(votes.len(), 3);
        let m = build_matrix(&votes).unwrap();
        let s = thurstone_scores(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_report(&s, &m, dir.path()).unwrap();
        let csv_text = std::fs::read_to_string(dir.path().join(SCORES_CSV)).unwrap();
        assert!(csv_text.lines().nth(1).unwrap().starts_with("ours,"));
        let first = std::fs::read(dir.path().join(REPORT_JSON)).unwrap();
        export_report(&s, &m, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join(REPORT_JSON)).unwrap(), first);
        assert_eq!(read_report(dir.path().join(REPORT_JSON)).unwrap().matrix, m);
        assert!(matches!(read_votes_csv("a,b\n".as_bytes()), Err(StudyError::Csv { line: 1, .. })));
    }
}
