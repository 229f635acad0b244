//! Post-processing of transport solutions: client contribution shares,
//! per-datum calibrated gradients, noisy-point flags, and report emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::fed::{FedSession, Mode};
use crate::measure::DiscreteMeasure;
use crate::ot::{wasserstein, Backend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientScore {
    pub client_id: usize,
    pub distance: f64,
    /// Inverse-distance share in [0,1]; the vector sums to 1.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumValuation {
    pub datum_index: usize,
    pub calibrated_gradient: f64,
    /// Strictly positive gradient: shifting mass toward this datum moves the
    /// client away from the target.
    pub flagged_noisy: bool,
}

/// Which transport problem supplies the dual potentials for detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionVariant {
    /// Client data against the server's interpolating measure (default).
    #[default]
    ClientEtaQ,
    /// Client data against the shared measure.
    ClientGamma,
    /// Client-side interpolating measure against the server's (experimental).
    ServerEta,
    /// Client-side interpolating measure against the shared measure
    /// (experimental).
    ServerGamma,
}

/// Inverse-distance contribution shares: s_i = (1/W_i) / Σ_j (1/W_j).
/// A zero distance is a degenerate perfect match and absorbs the whole share
/// (splitting it uniformly when several clients tie at zero).
pub fn contribution_shares(distances: &[f64]) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return input_err("contribution_shares: empty distance vector");
    }
    if distances.iter().any(|&d| d < 0.0 || !d.is_finite()) {
        return input_err("contribution_shares: distances must be finite and >= 0");
    }
    let zeros: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zeros.is_empty() {
        let share = 1.0 / zeros.len() as f64;
        let mut out = vec![0.0; distances.len()];
        for i in zeros {
            out[i] = share;
        }
        return Ok(out);
    }
    let total: f64 = distances.iter().map(|d| 1.0 / d).sum();
    Ok(distances.iter().map(|d| (1.0 / d) / total).collect())
}

/// Per-datum valuation from the source-side dual potentials:
/// g_l = f_l − (Σ_{j≠l} f_j) / (m−1) = (m f_l − Σ_j f_j) / (m−1).
/// Sums to zero and is invariant to constant shifts of f.
pub fn calibrated_gradients(f: &[f64]) -> Result<Vec<f64>> {
    let m = f.len();
    if m < 2 {
        return input_err("calibrated_gradients: need at least two potentials");
    }
    let total: f64 = f.iter().sum();
    Ok(f
        .iter()
        .map(|&fl| (m as f64 * fl - total) / (m as f64 - 1.0))
        .collect())
}

/// Solves transport from `source` to `target` and turns the source-side
/// potentials into calibrated gradients with positive-gradient flags.
pub fn detect_noisy(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    power: f64,
    backend: Backend,
) -> Result<Vec<DatumValuation>> {
    if source.len() < 2 {
        return input_err("detect_noisy: source needs at least two points");
    }
    let sol = wasserstein(source, target, power, backend)?;
    let grads = calibrated_gradients(sol.potentials.f.as_slice().unwrap())?;
    Ok(grads
        .into_iter()
        .enumerate()
        .map(|(i, g)| DatumValuation {
            datum_index: i,
            calibrated_gradient: g,
            flagged_noisy: g > 0.0,
        })
        .collect())
}

/// Session-level detection for one client under the chosen variant. The
/// client-side interpolating measure keeps the client's atom order, so its
/// indices map one-to-one onto data indices.
pub fn datum_valuations(
    session: &FedSession,
    client_id: usize,
    variant: DetectionVariant,
) -> Result<Vec<DatumValuation>> {
    let client = session
        .clients
        .get(client_id)
        .ok_or_else(|| crate::error::Error::InvalidInput(format!("no client {client_id}")))?;
    let power = session.config.power;
    let backend = session.config.backend;
    let eta_p = || {
        client
            .eta_p
            .as_ref()
            .ok_or_else(|| crate::error::Error::InvalidInput("run at least one round first".into()))
    };
    let eta_q = || {
        session.server.eta_q[client_id]
            .as_ref()
            .ok_or_else(|| crate::error::Error::InvalidInput("run at least one round first".into()))
    };
    match variant {
        DetectionVariant::ClientEtaQ => detect_noisy(&client.data, eta_q()?, power, backend),
        DetectionVariant::ClientGamma => detect_noisy(&client.data, &client.gamma, power, backend),
        DetectionVariant::ServerEta => detect_noisy(eta_p()?, eta_q()?, power, backend),
        DetectionVariant::ServerGamma => detect_noisy(eta_p()?, &client.gamma, power, backend),
    }
}

/// Central-difference probe of the calibrated gradient: perturbs the weight
/// of datum `l` by ±delta with renormalization and reports the slope of the
/// transport cost next to the analytic value.
pub fn finite_difference_check(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    datum_index: usize,
    delta: f64,
    power: f64,
    backend: Backend,
) -> Result<(f64, f64)> {
    let m = source.len();
    if datum_index >= m {
        return input_err("finite_difference_check: datum index out of range");
    }
    let min_weight = source.weights().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(delta > 0.0 && delta < min_weight) {
        return input_err("finite_difference_check: delta must lie in (0, min weight)");
    }
    let sol = wasserstein(source, target, power, backend)?;
    let analytic = calibrated_gradients(sol.potentials.f.as_slice().unwrap())?[datum_index];

    let perturbed = |sign: f64| -> Result<f64> {
        let mut w = source.weights().to_owned();
        w[datum_index] += sign * delta;
        let scale = 1.0 + sign * delta;
        w.mapv_inplace(|x| x / scale);
        let p = DiscreteMeasure::new(source.support().to_owned(), w)?;
        Ok(wasserstein(&p, target, power, backend)?.transport_cost)
    };
    let numeric = (perturbed(1.0)? - perturbed(-1.0)?) / (2.0 * delta);
    Ok((analytic, numeric))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub scores: Vec<ClientScore>,
    /// Clients whose distance exceeds median + 3·MAD.
    pub flagged_clients: Vec<usize>,
}

/// Scores every client by its distance to the learned barycenter and flags
/// outliers at median + 3·MAD.
pub fn relevance_report(session: &FedSession) -> Result<RelevanceReport> {
    if session.config.mode != Mode::Barycenter {
        return input_err("relevance_report: requires a barycenter-mode session");
    }
    let mut distances = Vec::with_capacity(session.clients.len());
    for c in &session.clients {
        let d = wasserstein(&c.data, &session.server.q, session.config.power, session.config.backend)?
            .distance;
        distances.push(d);
    }
    scores_from_distances(&distances)
}

/// Shares plus median+3·MAD outlier flags for a raw distance vector.
pub fn scores_from_distances(distances: &[f64]) -> Result<RelevanceReport> {
    let shares = contribution_shares(distances)?;
    let med = median(distances);
    let deviations: Vec<f64> = distances.iter().map(|d| (d - med).abs()).collect();
    let mad = median(&deviations);
    let threshold = med + 3.0 * mad;
    let scores = distances
        .iter()
        .zip(&shares)
        .enumerate()
        .map(|(i, (&d, &s))| ClientScore {
            client_id: i,
            distance: d,
            share: s,
        })
        .collect();
    let flagged = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(RelevanceReport {
        scores,
        flagged_clients: flagged,
    })
}

fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-datum record for the CSV export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatumRecord {
    pub client_id: usize,
    pub datum_index: usize,
    pub gradient: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuationReport {
    pub scores: Vec<ClientScore>,
    pub flagged_clients: Vec<usize>,
    pub datums: Vec<DatumRecord>,
}

impl ValuationReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn write_datum_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for rec in &self.datums {
            writer.serialize(rec)?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(n: usize, dim: usize, seed: u64) -> DiscreteMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
        DiscreteMeasure::uniform(support).unwrap()
    }

    #[test]
    fn equal_distances_split_evenly() {
        let shares = contribution_shares(&[1.0; 5]).unwrap();
        for s in shares {
            assert!((s - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_weights_and_scale_invariance() {
        let shares = contribution_shares(&[1.0, 3.0]).unwrap();
        assert!((shares[0] - 0.75).abs() < 1e-12);
        assert!((shares[1] - 0.25).abs() < 1e-12);
        let scaled = contribution_shares(&[17.0, 51.0]).unwrap();
        assert!((scaled[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_distance_degenerate_cases() {
        let unique = contribution_shares(&[0.0, 2.0, 3.0]).unwrap();
        assert_eq!(unique, vec![1.0, 0.0, 0.0]);
        let tied = contribution_shares(&[0.0, 0.0, 3.0]).unwrap();
        assert_eq!(tied, vec![0.5, 0.5, 0.0]);
        assert!(contribution_shares(&[-1.0, 1.0]).is_err());
    }

    #[test]
    fn hand_evaluated_gradients() {
        let g = calibrated_gradients(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(g, vec![1.5, -1.5, 0.0]);
    }

    #[test]
    fn constant_potentials_give_zero() {
        let g = calibrated_gradients(&[7.0; 6]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shift_invariance_is_exact() {
        let f = [3.0, 1.0, 2.0];
        let shifted: Vec<f64> = f.iter().map(|x| x + 10.0).collect();
        assert_eq!(
            calibrated_gradients(&f).unwrap(),
            calibrated_gradients(&shifted).unwrap()
        );
    }

    #[test]
    fn gradients_sum_to_zero_on_random_solves() {
        for seed in 0..5 {
            let p = random_measure(30, 2, seed);
            let q = random_measure(30, 2, seed + 100);
            let sol = wasserstein(&p, &q, 2.0, Backend::Exact).unwrap();
            let g = calibrated_gradients(sol.potentials.f.as_slice().unwrap()).unwrap();
            let sum: f64 = g.iter().sum();
            assert!(sum.abs() <= 1e-8, "sum {sum}");
        }
    }

    #[test]
    fn single_potential_rejected() {
        assert!(calibrated_gradients(&[1.0]).is_err());
    }

    #[test]
    fn null_distribution_flags_are_balanced() {
        let p = random_measure(200, 2, 1);
        let q = random_measure(200, 2, 2);
        let vals = detect_noisy(&p, &q, 2.0, Backend::Exact).unwrap();
        let flagged = vals.iter().filter(|v| v.flagged_noisy).count() as f64 / 200.0;
        assert!((0.3..=0.7).contains(&flagged), "flagged fraction {flagged}");
    }

    #[test]
    fn shifted_points_get_positive_gradients() {
        let clean = random_measure(100, 2, 3);
        let mut support = clean.support().to_owned();
        for i in 90..100 {
            support[[i, 0]] += 10.0;
        }
        let noised = DiscreteMeasure::uniform(support).unwrap();
        let target = random_measure(100, 2, 4);
        let vals = detect_noisy(&noised, &target, 2.0, Backend::Exact).unwrap();
        for v in &vals[90..] {
            assert!(v.flagged_noisy, "shifted datum {} not flagged", v.datum_index);
        }
    }

    #[test]
    fn fd_slope_matches_gradient_on_outlier() {
        let clean = random_measure(60, 2, 5);
        let mut support = clean.support().to_owned();
        support[[0, 0]] += 8.0;
        let p = DiscreteMeasure::uniform(support).unwrap();
        let q = random_measure(60, 2, 6);
        let (analytic, numeric) =
            finite_difference_check(&p, &q, 0, 1e-3, 2.0, Backend::Exact).unwrap();
        assert!(analytic > 0.0 && numeric > 0.0);
        assert!(
            (analytic - numeric).abs() <= 0.05 * analytic.abs(),
            "analytic {analytic} numeric {numeric}"
        );
    }

    #[test]
    fn symmetric_fixture_has_flat_slope() {
        let p = DiscreteMeasure::from_1d(&[-1.0, 1.0]).unwrap();
        let q = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let (analytic, numeric) =
            finite_difference_check(&p, &q, 0, 1e-4, 2.0, Backend::Exact).unwrap();
        assert!(analytic.abs() <= 1e-9);
        assert!(numeric.abs() <= 1e-3);
    }

    #[test]
    fn fd_rejects_large_delta() {
        let p = random_measure(10, 1, 7);
        let q = random_measure(10, 1, 8);
        assert!(finite_difference_check(&p, &q, 0, 0.2, 2.0, Backend::Exact).is_err());
    }

    #[test]
    fn identical_clients_score_evenly_with_no_flags() {
        let report = scores_from_distances(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(report.flagged_clients.is_empty());
        for s in &report.scores {
            assert!((s.share - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn distant_client_is_flagged() {
        let report = scores_from_distances(&[1.0, 1.1, 0.9, 1.05, 9.0]).unwrap();
        assert_eq!(report.flagged_clients, vec![4]);
        let argmax = report
            .scores
            .iter()
            .max_by(|a, b| a.share.partial_cmp(&b.share).unwrap())
            .unwrap();
        assert_eq!(argmax.client_id, 2); // smallest distance, largest share
    }

    #[test]
    fn report_files_round_trip() {
        let report = ValuationReport {
            scores: vec![ClientScore {
                client_id: 0,
                distance: 1.0,
                share: 1.0,
            }],
            flagged_clients: vec![],
            datums: vec![DatumRecord {
                client_id: 0,
                datum_index: 3,
                gradient: -0.5,
                flagged: false,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("report.json");
        let csv_path = dir.path().join("datums.csv");
        report.write_json(&json).unwrap();
        report.write_datum_csv(&csv_path).unwrap();
        let back: ValuationReport =
            serde_json::from_reader(std::fs::File::open(&json).unwrap()).unwrap();
        assert_eq!(back.scores.len(), 1);
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.contains("client_id"));
        assert!(text.contains("-0.5"));
    }
}
