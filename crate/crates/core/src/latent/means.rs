use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::ingest::{GrayImage, PeriodTaxonomy};
use crate::nn::Tensor;
use crate::vae::Vae;

pub const DEFAULT_KNOB_RANGE: (f64, f64) = (-4.0, 4.0);

/// How samples are grouped before averaging their latent means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    Period,
    Genre,
    PeriodGenre,
}

impl GroupBy {
    /// Group key for one sample; the joint key is `period|genre`.
    pub fn key(self, period: &str, genre: &str) -> String {
        match self {
            GroupBy::Period => period.to_string(),
            GroupBy::Genre => genre.to_string(),
            GroupBy::PeriodGenre => format!("{period}|{genre}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanLatentRow {
    pub group: String,
    pub n: usize,
    pub mean_mu: Vec<f64>,
}

/// Rows are sorted by group key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanLatentTable {
    pub latent_dim: usize,
    pub rows: Vec<MeanLatentRow>,
}

impl MeanLatentTable {
    pub fn row(&self, group: &str) -> Option<&MeanLatentRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

/// Arithmetic mean of `mu` per group.
pub fn mean_latent<G: AsRef<str>, T: Copy + Into<f64>, V: AsRef<[T]>>(latents: &[(G, V)]) -> Result<MeanLatentTable, LatentError> {
    let Some((_, first)) = latents.first() else {
        return Err(LatentError::Input("no latent vectors to average".into()));
    };
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(LatentError::Input("latent vectors are empty".into()));
    }
    let mut sums: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
    for (g, mu) in latents {
        let mu = mu.as_ref();
        if mu.len() != dim {
            return Err(LatentError::Dimension { expected: dim, found: mu.len() });
        }
        let (n, acc) = sums.entry(g.as_ref()).or_insert_with(|| (0, vec![0.0; dim]));
        *n += 1;
        for (a, &m) in acc.iter_mut().zip(mu) {
            *a += m.into();
        }
    }
    let rows = sums
        .into_iter()
        .map(|(g, (n, acc))| MeanLatentRow {
            group: g.to_string(),
            n,
            mean_mu: acc.into_iter().map(|s| s / n as f64).collect(),
        })
        .collect();
    Ok(MeanLatentTable { latent_dim: dim, rows })
}

/// Decode a single latent vector into an image.
pub fn decode_latent(model: &Vae, z: &[f64]) -> Result<GrayImage, LatentError> {
    let d = model.latent_dim();
    if z.len() != d {
        return Err(LatentError::Dimension { expected: d, found: z.len() });
    }
    let zt = Tensor::new(vec![1, d], z.iter().map(|&v| v as f32).collect())?;
    let out = model.decode(&zt)?;
    let s = model.image_size();
    Ok(GrayImage::from_clamped(s, s, out.into_data())?)
}

pub fn decode_mean(model: &Vae, row: &MeanLatentRow) -> Result<GrayImage, LatentError> {
    decode_latent(model, &row.mean_mu)
}

/// Point at fraction `t` of the way from `a` to `b`.
pub fn interpolate_latent(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>, LatentError> {
    if a.len() != b.len() {
        return Err(LatentError::Dimension { expected: a.len(), found: b.len() });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(LatentError::Input(format!("t = {t} is outside [0, 1]")));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (1.0 - t) * x + t * y).collect())
}

pub fn interpolate(model: &Vae, a: &[f64], b: &[f64], t: f64) -> Result<(Vec<f64>, GrayImage), LatentError> {
    let z = interpolate_latent(a, b, t)?;
    let img = decode_latent(model, &z)?;
    Ok((z, img))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobEdit {
    pub z: Vec<f64>,
    pub entry: usize,
    pub requested: f64,
    pub applied: f64,
    pub clamped: bool,
}

/// Replace entry `entry` of `z` with `value` clamped to `range`.
pub fn knob_edit(z: &[f64], entry: usize, value: f64, range: (f64, f64)) -> Result<KnobEdit, LatentError> {
    if entry >= z.len() {
        return Err(LatentError::Input(format!("entry {entry} out of range for latent dim {}", z.len())));
    }
    if !value.is_finite() || !(range.0 <= range.1) {
        return Err(LatentError::Input(format!("bad knob value {value} or range {range:?}")));
    }
    let applied = value.clamp(range.0, range.1);
    let mut out = z.to_vec();
    out[entry] = applied;
    Ok(KnobEdit {
        z: out,
        entry,
        requested: value,
        applied,
        clamped: applied != value,
    })
}

pub fn knob_adjust(
    model: &Vae,
    z: &[f64],
    entry: usize,
    value: f64,
    range: (f64, f64),
) -> Result<(KnobEdit, GrayImage), LatentError> {
    let edit = knob_edit(z, entry, value, range)?;
    let img = decode_latent(model, &edit.z)?;
    Ok((edit, img))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub entry_index: usize,
    pub rows: Vec<(String, f64)>,
}

/// One entry of every group mean. With a taxonomy, known periods come first
/// in chronological order and the rest follow by key.
pub fn entry_summary(
    table: &MeanLatentTable,
    entry: usize,
    taxonomy: Option<&PeriodTaxonomy>,
) -> Result<EntrySummary, LatentError> {
    if entry >= table.latent_dim {
        return Err(LatentError::Input(format!(
            "entry {entry} out of range for latent dim {}",
            table.latent_dim
        )));
    }
    let mut rows: Vec<(String, f64)> = table.rows.iter().map(|r| (r.group.clone(), r.mean_mu[entry])).collect();
    if let Some(tax) = taxonomy {
        rows.sort_by_key(|(g, _)| tax.order_of(g));
    }
    Ok(EntrySummary { entry_index: entry, rows })
}
