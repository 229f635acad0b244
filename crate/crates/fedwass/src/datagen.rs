//! Seeded synthetic dataset generation: Gaussian blobs and the five client
//! sampling regimes (same distribution, skewed distributions, different
//! sizes, label noise, feature noise).

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::LabeledDataset;
use crate::error::{input_err, Result};

/// What kind of corruption to plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Feature,
    Label,
}

/// One of the five client sampling regimes, fully parameterized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSpec {
    /// Case id in 1..=5.
    pub case: u8,
    /// Per-client, per-class sampling proportions (rows sum to 1).
    pub class_proportions: Vec<Vec<f64>>,
    /// Per-client sizes.
    pub sizes: Vec<usize>,
    /// Per-client corruption ratios in [0,1] (cases 4 and 5; zeros otherwise).
    pub noise_ratios: Vec<f64>,
    /// Standard deviation of the additive feature noise (case 5).
    pub sigma: f64,
    pub seed: u64,
}

impl CaseSpec {
    /// The paper-style parameterization of cases 1-5 for `clients` clients of
    /// nominal size `per_client` over `num_classes` classes.
    pub fn standard(
        case: u8,
        clients: usize,
        per_client: usize,
        num_classes: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(1..=5).contains(&case) {
            return input_err("case must be in 1..=5");
        }
        if clients == 0 || per_client == 0 || num_classes == 0 {
            return input_err("clients, per_client and num_classes must be >= 1");
        }
        let uniform = vec![1.0 / num_classes as f64; num_classes];
        let mut class_proportions = vec![uniform.clone(); clients];
        let mut sizes = vec![per_client; clients];
        let mut noise_ratios = vec![0.0; clients];
        match case {
            1 => {}
            2 => {
                // client i leans 80% on two "own" classes, 20% on the rest
                for (i, props) in class_proportions.iter_mut().enumerate() {
                    let c0 = (2 * i) % num_classes;
                    let c1 = (2 * i + 1) % num_classes;
                    let others = num_classes.saturating_sub(if c0 == c1 { 1 } else { 2 });
                    for (c, p) in props.iter_mut().enumerate() {
                        *p = if c == c0 || c == c1 {
                            0.8 / if c0 == c1 { 1.0 } else { 2.0 }
                        } else if others > 0 {
                            0.2 / others as f64
                        } else {
                            0.0
                        };
                    }
                }
            }
            3 => {
                let ratios = size_ratios(clients);
                let total: usize = per_client * clients;
                sizes = ratios
                    .iter()
                    .map(|r| ((r * total as f64).round() as usize).max(1))
                    .collect();
            }
            4 | 5 => {
                noise_ratios = corruption_ratios(clients);
            }
            _ => unreachable!(),
        }
        Ok(Self {
            case,
            class_proportions,
            sizes,
            noise_ratios,
            sigma,
            seed,
        })
    }
}

/// 10%,15%,20%,25%,30% pattern, renormalized for other client counts.
fn size_ratios(clients: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..clients).map(|i| 0.10 + 0.05 * i as f64).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / sum).collect()
}

/// 0%,5%,10%,15%,20% pattern, extended by 5% steps.
fn corruption_ratios(clients: usize) -> Vec<f64> {
    (0..clients).map(|i| (0.05 * i as f64).min(1.0)).collect()
}

/// Samples `points_per` points around each mean with shared covariance.
/// Class label = cluster index. Deterministic under `seed`.
pub fn gaussian_blobs(
    means: &Array2<f64>,
    points_per: usize,
    cov: &Array2<f64>,
    seed: u64,
) -> Result<LabeledDataset> {
    let k = means.nrows();
    let d = means.ncols();
    if k == 0 || points_per == 0 {
        return input_err("gaussian_blobs: need at least one cluster and one point");
    }
    if cov.nrows() != d || cov.ncols() != d {
        return input_err("gaussian_blobs: covariance shape must match dimension");
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if means.row(i) == means.row(j) {
                return input_err("gaussian_blobs: cluster means must be distinct");
            }
        }
    }
    let root = psd_sqrt(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k * points_per;
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for c in 0..k {
        for _ in 0..points_per {
            let z: Array1<f64> =
                Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = root.dot(&z);
            for col in 0..d {
                features[[row, col]] = means[[c, col]] + x[col];
            }
            labels.push(c);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, k)
}

fn psd_sqrt(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let d = cov.nrows();
    let nm = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(nm);
    if eig.eigenvalues.iter().any(|&v| v < -1e-9) {
        return input_err("gaussian_blobs: covariance must be PSD");
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = eig.eigenvectors;
    let root = &q * nalgebra::DMatrix::from_diagonal(&vals) * q.transpose();
    Ok(Array2::from_shape_fn((d, d), |(i, j)| root[(i, j)]))
}

/// Output of [`make_case`]: one dataset per client plus the planted
/// corruption indices (empty for clean cases).
#[derive(Debug, Clone)]
pub struct ClientData {
    pub data: LabeledDataset,
    pub noisy_indices: Vec<usize>,
}

/// Partitions/samples `base` into per-client datasets according to `spec`.
pub fn make_case(spec: &CaseSpec, base: &LabeledDataset) -> Result<Vec<ClientData>> {
    let clients = spec.sizes.len();
    if spec.class_proportions.len() != clients || spec.noise_ratios.len() != clients {
        return input_err("make_case: per-client vectors disagree in length");
    }
    let v = base.num_classes;
    // class pools, shuffled once for disjoint-ish sampling
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); v];
    for i in 0..base.len() {
        pools[base.labels[i]].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; v];

    let mut out = Vec::with_capacity(clients);
    for ci in 0..clients {
        let size = spec.sizes[ci];
        let props = &spec.class_proportions[ci];
        if props.len() != v {
            return input_err("make_case: proportions width must equal class count");
        }
        if (props.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return input_err("make_case: proportions must sum to 1");
        }
        // per-class counts, largest-remainder rounding to hit `size` exactly
        let mut counts: Vec<usize> = props.iter().map(|p| (p * size as f64) as usize).collect();
        let mut assigned: usize = counts.iter().sum();
        let mut remainders: Vec<(f64, usize)> = props
            .iter()
            .enumerate()
            .map(|(c, p)| (p * size as f64 - counts[c] as f64, c))
            .collect();
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut ri = 0;
        while assigned < size {
            counts[remainders[ri % v].1] += 1;
            assigned += 1;
            ri += 1;
        }

        let mut rows = Vec::with_capacity(size);
        for (c, &count) in counts.iter().enumerate() {
            if cursor[c] + count > pools[c].len() {
                return input_err(format!(
                    "make_case: base data exhausted for class {c} (need {count} more)"
                ));
            }
            rows.extend_from_slice(&pools[c][cursor[c]..cursor[c] + count]);
            cursor[c] += count;
        }
        rows.shuffle(&mut rng);

        let features = Array2::from_shape_fn((rows.len(), base.dim()), |(i, j)| {
            base.features[[rows[i], j]]
        });
        let labels: Vec<usize> = rows.iter().map(|&r| base.labels[r]).collect();
        let data = LabeledDataset::new(features, labels, v)?;

        let (data, noisy_indices) = match spec.case {
            4 => inject_noise(&data, spec.noise_ratios[ci], NoiseKind::Label, spec.sigma,
                spec.seed.wrapping_add(1000 + ci as u64))?,
            5 => inject_noise(&data, spec.noise_ratios[ci], NoiseKind::Feature, spec.sigma,
                spec.seed.wrapping_add(1000 + ci as u64))?,
            _ => (data, Vec::new()),
        };
        out.push(ClientData { data, noisy_indices });
    }
    Ok(out)
}

/// Corrupts ceil(fraction * n) points and returns the exact index set.
/// Clean rows are bitwise identical to the input.
pub fn inject_noise(
    data: &LabeledDataset,
    fraction: f64,
    kind: NoiseKind,
    sigma: f64,
    seed: u64,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return input_err("inject_noise: fraction must be in [0,1]");
    }
    let n = data.len();
    let count = (fraction * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    indices.truncate(count);
    indices.sort_unstable();

    let mut features = data.features.clone();
    let mut labels = data.labels.clone();
    for &i in &indices {
        match kind {
            NoiseKind::Feature => {
                for c in 0..data.dim() {
                    let z: f64 = rng.sample(StandardNormal);
                    features[[i, c]] += sigma * z;
                }
            }
            NoiseKind::Label => {
                if data.num_classes > 1 {
                    let shift = rng.gen_range(1..data.num_classes);
                    labels[i] = (labels[i] + shift) % data.num_classes;
                }
            }
        }
    }
    Ok((
        LabeledDataset::new(features, labels, data.num_classes)?,
        indices,
    ))
}

/// Writes a dataset as CSV with header f0..f{d-1},label.
pub fn write_dataset_csv(data: &LabeledDataset, path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|c| format!("f{c}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for i in 0..data.len() {
        let mut record: Vec<String> = (0..d)
            .map(|c| format!("{:?}", data.features[[i, c]]))
            .collect();
        record.push(data.labels[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`]. The class count is the
/// largest label plus one.
pub fn read_dataset_csv(path: &std::path::Path) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[headers.len() - 1] != "label" {
        return input_err("dataset csv: last column must be 'label'");
    }
    let d = headers.len() - 1;
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != d + 1 {
            return input_err("dataset csv: ragged row");
        }
        for c in 0..d {
            rows.push(record[c].parse::<f64>().map_err(|e| {
                crate::error::Error::InvalidInput(format!("dataset csv: bad float: {e}"))
            })?);
        }
        labels.push(record[d].parse::<usize>().map_err(|e| {
            crate::error::Error::InvalidInput(format!("dataset csv: bad label: {e}"))
        })?);
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d), rows)
        .map_err(|e| crate::error::Error::InvalidInput(e.to_string()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, labels, num_classes)
}
