//! Feature extraction: PCA (fit through the SVD of the centered data
//! matrix) and Welch power spectral density.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{flatten_channel_major, WindowSet};
use crate::error::{Error, Result};
use crate::io::ClassLabel;
use crate::linalg;

/// Windows x features, with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub labels: Vec<ClassLabel>,
    pub trial_index: Vec<usize>,
    pub run_index: Vec<usize>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> FeatureMatrix {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&i| keep(i)).collect();
        FeatureMatrix {
            data: self.data.select(Axis(0), &rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            trial_index: rows.iter().map(|&i| self.trial_index[i]).collect(),
            run_index: rows.iter().map(|&i| self.run_index[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    pub mean: Array1<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Array2<f64>,
    /// `sigma_i^2 / (n - 1)` for the retained components.
    pub explained_variance: Array1<f64>,
    pub explained_variance_ratio: Array1<f64>,
}

/// Fit a `k`-component PCA to the rows of `x`.
///
/// Components are the leading right singular vectors of the centered data,
/// each flipped so that its largest-magnitude entry is positive (first
/// such entry on ties).
pub fn pca_fit(x: ArrayView2<'_, f64>, k: usize) -> Result<PcaTransform> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, actual: n });
    }
    let max = n.min(d);
    if k == 0 || k > max {
        return Err(Error::BadK { k, max });
    }
    let mean = linalg::column_means(x);
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let (s, vt) = linalg::svd_right(centered.view())?;

    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut components = vt.slice(ndarray::s![..k, ..]).to_owned();
    for mut row in components.rows_mut() {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
    let explained_variance: Array1<f64> = s[..k].iter().map(|v| v * v / (n - 1) as f64).collect();
    let explained_variance_ratio: Array1<f64> =
        s[..k].iter().map(|v| if total > 0.0 { v * v / total } else { 0.0 }).collect();
    Ok(PcaTransform { mean, components, explained_variance, explained_variance_ratio })
}

/// Cumulative explained-variance ratio for every component count.
pub fn variance_curve(x: ArrayView2<'_, f64>) -> Result<Vec<(usize, f64)>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, actual: n });
    }
    let mean = linalg::column_means(x);
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let s = linalg::singular_values(centered.view())?;
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    Ok(s.iter()
        .enumerate()
        .map(|(i, v)| {
            acc += v * v;
            (i + 1, if total > 0.0 { (acc / total).min(1.0) } else { 1.0 })
        })
        .collect())
}

impl PcaTransform {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// Project one row; `centered` is scratch of length `dim()`.
    pub fn transform_row(&self, row: &[f64], centered: &mut [f64], out: &mut [f64]) {
        centered.iter_mut().zip(row).zip(self.mean.iter()).for_each(|((c, x), m)| *c = x - m);
        for (o, comp) in out.iter_mut().zip(self.components.rows()) {
            *o = linalg::dot(centered, comp.as_slice().expect("standard layout"));
        }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.ncols() });
        }
        let mut out = Array2::zeros((x.nrows(), self.k()));
        let mut centered = vec![0.0; self.dim()];
        let mut row_buf = vec![0.0; self.dim()];
        for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let row = match src.as_slice() {
                Some(s) => s,
                None => {
                    row_buf.iter_mut().zip(src.iter()).for_each(|(b, v)| *b = *v);
                    &row_buf
                }
            };
            self.transform_row(row, &mut centered, dst.as_slice_mut().expect("standard layout"));
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        z.dot(&self.components) + self.mean.view().insert_axis(Axis(0))
    }

    /// Leading `k` components of an already-fitted transform.
    pub fn truncate(&self, k: usize) -> Result<PcaTransform> {
        if k == 0 || k > self.k() {
            return Err(Error::BadK { k, max: self.k() });
        }
        Ok(PcaTransform {
            mean: self.mean.clone(),
            components: self.components.slice(ndarray::s![..k, ..]).to_owned(),
            explained_variance: self.explained_variance.slice(ndarray::s![..k]).to_owned(),
            explained_variance_ratio: self.explained_variance_ratio.slice(ndarray::s![..k]).to_owned(),
        })
    }

    /// Round components to binary32, the precision of the saved payload,
    /// so an in-memory transform and its saved copy behave identically.
    pub fn quantize_components(&mut self) {
        self.components.mapv_inplace(|v| v as f32 as f64);
    }

    fn payload(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(4 * self.components.len());
        for &v in self.components.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        bytes
    }

    /// Content id tying a classifier to this exact transform.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.mean.iter() {
            h.update(v.to_le_bytes());
        }
        h.update(self.payload());
        hex::encode(&h.finalize()[..8])
    }

    /// Write `pca.json` and the binary32 component payload `pca.f32le`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let file = PcaFile {
            id: self.id(),
            n_features: self.dim(),
            k: self.k(),
            mean: self.mean.to_vec(),
            explained_variance: self.explained_variance.to_vec(),
            explained_variance_ratio: self.explained_variance_ratio.to_vec(),
            components_file: PCA_PAYLOAD.to_string(),
        };
        let json_path = dir.join(PCA_JSON);
        fs::write(&json_path, serde_json::to_string_pretty(&file).expect("pca serializes") + "\n")
            .map_err(|e| Error::io(&json_path, e))?;
        let bin_path = dir.join(PCA_PAYLOAD);
        fs::write(&bin_path, self.payload()).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path) -> Result<PcaTransform> {
        let json_path = dir.join(PCA_JSON);
        if !json_path.is_file() {
            return Err(Error::MissingFile(json_path));
        }
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let file: PcaFile = serde_json::from_str(&text).map_err(|e| Error::MalformedMeta(e.to_string()))?;
        let bin_path = dir.join(&file.components_file);
        if !bin_path.is_file() {
            return Err(Error::MissingFile(bin_path));
        }
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let expected = 4 * (file.k * file.n_features) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::LengthMismatch { expected, actual: bytes.len() as u64 });
        }
        if file.mean.len() != file.n_features
            || file.explained_variance.len() != file.k
            || file.explained_variance_ratio.len() != file.k
        {
            return Err(Error::MalformedMeta("pca vector lengths disagree with k / n_features".into()));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let pca = PcaTransform {
            mean: Array1::from(file.mean),
            components: Array2::from_shape_vec((file.k, file.n_features), values).expect("length checked"),
            explained_variance: Array1::from(file.explained_variance),
            explained_variance_ratio: Array1::from(file.explained_variance_ratio),
        };
        if pca.id() != file.id {
            return Err(Error::PairingMismatch(format!("pca.json id {} does not match payload", file.id)));
        }
        Ok(pca)
    }
}

pub const PCA_JSON: &str = "pca.json";
pub const PCA_PAYLOAD: &str = "pca.f32le";

#[derive(Debug, Serialize, Deserialize)]
struct PcaFile {
    id: String,
    n_features: usize,
    k: usize,
    mean: Vec<f64>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    components_file: String,
}

/// Welch estimator settings. The taper is always a periodic Hann window,
/// segments are mean-detrended and the output is a one-sided density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WelchSpec {
    pub nperseg: usize,
    pub noverlap: usize,
}

impl Default for WelchSpec {
    fn default() -> Self {
        WelchSpec { nperseg: 256, noverlap: 128 }
    }
}

impl WelchSpec {
    pub fn n_bins(&self) -> usize {
        self.nperseg / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.nperseg < 2 || self.noverlap >= self.nperseg {
            return Err(Error::BadWelchSpec(format!(
                "need 0 <= noverlap ({}) < nperseg ({}), nperseg >= 2",
                self.noverlap, self.nperseg
            )));
        }
        Ok(())
    }
}

/// Reusable Welch PSD estimator (window, scale and FFT plan precomputed).
#[derive(Clone)]
pub struct Welch {
    spec: WelchSpec,
    fs: f64,
    taper: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch").field("spec", &self.spec).field("fs", &self.fs).finish()
    }
}

impl Welch {
    pub fn new(spec: WelchSpec, fs: f64) -> Result<Self> {
        spec.validate()?;
        let n = spec.nperseg;
        let taper: Vec<f64> =
            (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let scale = 1.0 / (fs * taper.iter().map(|w| w * w).sum::<f64>());
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Welch { spec, fs, taper, scale, fft })
    }

    pub fn spec(&self) -> WelchSpec {
        self.spec
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.fs / self.spec.nperseg as f64
    }

    /// One-sided PSD of `signal` written to `out` (length `n_bins`).
    pub fn psd_into(&self, signal: ArrayView1<'_, f64>, out: &mut [f64]) -> Result<()> {
        self.psd_with(signal, out, &mut WelchScratch::default())
    }

    /// [`Welch::psd_into`] reusing FFT buffers across calls.
    pub(crate) fn psd_with(
        &self,
        signal: ArrayView1<'_, f64>,
        out: &mut [f64],
        scratch: &mut WelchScratch,
    ) -> Result<()> {
        let n_seg = self.n_segments(signal.len())?;
        let hop = self.hop();
        let n = self.spec.nperseg;
        out.iter_mut().for_each(|o| *o = 0.0);
        for seg in 0..n_seg {
            self.segment_power(signal.slice(ndarray::s![seg * hop..seg * hop + n]), scratch);
            for (o, p) in out.iter_mut().zip(&scratch.power) {
                *o += p;
            }
        }
        self.finish(out, n_seg);
        Ok(())
    }

    fn hop(&self) -> usize {
        self.spec.nperseg - self.spec.noverlap
    }

    fn n_segments(&self, len: usize) -> Result<usize> {
        let n = self.spec.nperseg;
        if len < n {
            return Err(Error::WindowTooShort { len, nperseg: n });
        }
        Ok(1 + (len - n) / self.hop())
    }

    /// Squared FFT magnitude of one detrended, tapered segment, left in
    /// `scratch.power` (length `n_bins`).
    fn segment_power(&self, part: ArrayView1<'_, f64>, scratch: &mut WelchScratch) {
        let n = self.spec.nperseg;
        scratch.buf.resize(n, Complex64::new(0.0, 0.0));
        scratch.fft.resize(self.fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
        let mean = part.sum() / n as f64;
        for ((b, x), w) in scratch.buf.iter_mut().zip(part.iter()).zip(&self.taper) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        self.fft.process_with_scratch(&mut scratch.buf, &mut scratch.fft);
        scratch.power.clear();
        scratch.power.extend(scratch.buf[..self.spec.n_bins()].iter().map(|b| b.norm_sqr()));
    }

    /// Average summed segment powers and apply the density scaling.
    fn finish(&self, out: &mut [f64], n_seg: usize) {
        let n = self.spec.nperseg;
        let last = n / 2;
        for (bin, o) in out.iter_mut().enumerate() {
            let one_sided = if bin == 0 || (n.is_multiple_of(2) && bin == last) { 1.0 } else { 2.0 };
            *o *= self.scale * one_sided / n_seg as f64;
        }
    }
}

#[derive(Default)]
pub(crate) struct WelchScratch {
    buf: Vec<Complex64>,
    fft: Vec<Complex64>,
    power: Vec<f64>,
}

/// Per-channel Welch PSD of a `win_len x n_channels` window; returns
/// `n_channels x (nperseg / 2 + 1)`.
pub fn welch_psd(window: ArrayView2<'_, f64>, spec: WelchSpec, fs: f64) -> Result<Array2<f64>> {
    let welch = Welch::new(spec, fs)?;
    let mut out = Array2::zeros((window.ncols(), spec.n_bins()));
    for (col, mut row) in window.axis_iter(Axis(1)).zip(out.rows_mut()) {
        welch.psd_into(col, row.as_slice_mut().expect("standard layout"))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsdLayout {
    /// Per-channel spectra concatenated channel-major.
    PerChannel,
    /// Spectra averaged across channels.
    ChannelMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Flattened time samples, channel-major.
    Raw,
    Psd,
}

/// Serializable description of the per-window feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub welch: WelchSpec,
    pub layout: PsdLayout,
    /// Keep only PSD bins whose centre frequency lies in `[lo, hi]` Hz.
    pub psd_band_hz: Option<[f64; 2]>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            kind: FeatureKind::Psd,
            welch: WelchSpec::default(),
            layout: PsdLayout::PerChannel,
            psd_band_hz: None,
        }
    }
}

/// Maps one `win_len x n_channels` window to a feature row.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    spec: FeatureSpec,
    win_len: usize,
    n_channels: usize,
    welch: Option<Welch>,
    bins: std::ops::Range<usize>,
}

impl FeatureExtractor {
    pub fn new(spec: FeatureSpec, fs: f64, win_len: usize, n_channels: usize) -> Result<Self> {
        match spec.kind {
            FeatureKind::Raw => Ok(FeatureExtractor { spec, win_len, n_channels, welch: None, bins: 0..0 }),
            FeatureKind::Psd => {
                let welch = Welch::new(spec.welch, fs)?;
                if win_len < spec.welch.nperseg {
                    return Err(Error::WindowTooShort { len: win_len, nperseg: spec.welch.nperseg });
                }
                let n_bins = spec.welch.n_bins();
                let bins = match spec.psd_band_hz {
                    None => 0..n_bins,
                    Some([lo, hi]) => {
                        let inside: Vec<usize> =
                            (0..n_bins).filter(|&b| (lo..=hi).contains(&welch.bin_hz(b))).collect();
                        match (inside.first(), inside.last()) {
                            (Some(&a), Some(&b)) => a..b + 1,
                            _ => return Err(Error::BadWelchSpec(format!("no PSD bins inside {lo}..{hi} Hz"))),
                        }
                    }
                };
                Ok(FeatureExtractor { spec, win_len, n_channels, welch: Some(welch), bins })
            }
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match self.spec.kind {
            FeatureKind::Raw => self.win_len * self.n_channels,
            FeatureKind::Psd => match self.spec.layout {
                PsdLayout::PerChannel => self.bins.len() * self.n_channels,
                PsdLayout::ChannelMean => self.bins.len(),
            },
        }
    }

    pub fn extract(&self, window: ArrayView2<'_, f64>, out: &mut [f64]) -> Result<()> {
        self.extract_with(window, out, &mut WelchScratch::default())
    }

    fn extract_with(&self, window: ArrayView2<'_, f64>, out: &mut [f64], scratch: &mut WelchScratch) -> Result<()> {
        if window.dim() != (self.win_len, self.n_channels) {
            return Err(Error::DimensionMismatch { expected: self.win_len * self.n_channels, actual: window.len() });
        }
        let Some(welch) = &self.welch else {
            flatten_channel_major(window, out);
            return Ok(());
        };
        let mut psd = vec![0.0; welch.spec().n_bins()];
        self.clear_mean(out);
        for (c, col) in window.axis_iter(Axis(1)).enumerate() {
            welch.psd_with(col, &mut psd, scratch)?;
            self.write_band(c, &psd, out);
        }
        self.finish_mean(out);
        Ok(())
    }

    fn clear_mean(&self, out: &mut [f64]) {
        if self.spec.layout == PsdLayout::ChannelMean {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    fn write_band(&self, channel: usize, psd: &[f64], out: &mut [f64]) {
        let nb = self.bins.len();
        let band = &psd[self.bins.clone()];
        match self.spec.layout {
            PsdLayout::PerChannel => out[channel * nb..(channel + 1) * nb].copy_from_slice(band),
            PsdLayout::ChannelMean => out.iter_mut().zip(band).for_each(|(o, p)| *o += p),
        }
    }

    fn finish_mean(&self, out: &mut [f64]) {
        if self.spec.layout == PsdLayout::ChannelMean {
            let n = self.n_channels as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
    }

    /// Features of every window. Overlapping windows of one trial share
    /// Welch segments, so each segment spectrum is computed once; the
    /// result is identical to calling [`FeatureExtractor::extract`] per
    /// window.
    pub fn extract_all(&self, ws: &WindowSet) -> Result<FeatureMatrix> {
        let mut data = Array2::zeros((ws.len(), self.dim()));
        let mut scratch = WelchScratch::default();
        match &self.welch {
            None => {
                for (i, mut row) in data.rows_mut().into_iter().enumerate() {
                    self.extract_with(ws.window(i), row.as_slice_mut().expect("standard layout"), &mut scratch)?;
                }
            }
            Some(welch) => self.psd_all(welch, ws, &mut data, &mut scratch)?,
        }
        Ok(FeatureMatrix { data, labels: ws.labels(), trial_index: ws.trial_indices(), run_index: ws.run_indices() })
    }

    fn psd_all(&self, welch: &Welch, ws: &WindowSet, data: &mut Array2<f64>, scratch: &mut WelchScratch) -> Result<()> {
        let step = ws.spec().step;
        let (n, hop) = (welch.spec.nperseg, welch.hop());
        let n_seg = welch.n_segments(self.win_len)?;
        let n_bins = welch.spec.n_bins();
        if ws.n_channels() != self.n_channels || ws.spec().win_len != self.win_len {
            return Err(Error::DimensionMismatch {
                expected: self.win_len * self.n_channels,
                actual: ws.spec().win_len * ws.n_channels(),
            });
        }
        let trial_of = ws.trial_indices();
        let mut psd = vec![0.0; n_bins];
        // per channel: segment start -> power spectrum, for the current trial
        let mut cache: Vec<HashMap<usize, Vec<f64>>> = vec![HashMap::new(); self.n_channels];
        let mut first = 0;
        for (i, mut row) in data.rows_mut().into_iter().enumerate() {
            if i == 0 || trial_of[i] != trial_of[i - 1] {
                first = i;
                cache.iter_mut().for_each(HashMap::clear);
            }
            let offset = (i - first) * step;
            let samples = &ws.trials()[trial_of[i]].samples;
            let out = row.as_slice_mut().expect("standard layout");
            self.clear_mean(out);
            for (c, seen) in cache.iter_mut().enumerate() {
                psd.iter_mut().for_each(|p| *p = 0.0);
                for seg in 0..n_seg {
                    let start = offset + seg * hop;
                    let power = seen.entry(start).or_insert_with(|| {
                        welch.segment_power(samples.slice(ndarray::s![start..start + n, c]), scratch);
                        scratch.power.clone()
                    });
                    for (p, v) in psd.iter_mut().zip(power.iter()) {
                        *p += v;
                    }
                }
                welch.finish(&mut psd, n_seg);
                self.write_band(c, &psd, out);
            }
            self.finish_mean(out);
        }
        Ok(())
    }
}

/// Welch PSD features for every window of `ws`.
pub fn psd_features(ws: &WindowSet, welch: WelchSpec, layout: PsdLayout, fs: f64) -> Result<FeatureMatrix> {
    let spec = FeatureSpec { kind: FeatureKind::Psd, welch, layout, psd_band_hz: None };
    FeatureExtractor::new(spec, fs, ws.spec().win_len, ws.n_channels())?.extract_all(ws)
}

/// Flattened raw windows (channel-major) for every window of `ws`.
pub fn raw_features(ws: &WindowSet) -> FeatureMatrix {
    FeatureMatrix {
        data: ws.flatten(),
        labels: ws.labels(),
        trial_index: ws.trial_indices(),
        run_index: ws.run_indices(),
    }
}
