//! Flat JSON pipeline configuration shared by every command.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{ClassifierKind, LdaOptions};
use crate::decoder::{DecoderConfig, FilterMode, PreprocessConfig};
use crate::error::{Error, Result};
use crate::evidence::{default_deltas, default_thetas, EvidenceConfig, Objective};
use crate::features::{FeatureExtractor, FeatureKind, FeatureSpec, PsdLayout, WelchSpec};

/// Short sha256 digest of a value's canonical JSON encoding.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Lexicographic,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    pub car: bool,
    pub filter_mode: FilterMode,
    pub win_len_s: f64,
    pub step_s: f64,

    pub features: FeatureKind,
    pub psd_layout: PsdLayout,
    pub welch_nperseg: usize,
    pub welch_noverlap: usize,
    pub psd_band_hz: Option<[f64; 2]>,
    pub pca_k: Option<usize>,
    pub classifier: ClassifierKind,
    pub lda_tol: f64,

    pub thetas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub objective: ObjectiveKind,
    pub weight_incorrect: f64,
    pub weight_timeout: f64,

    pub sweep_ks: Vec<usize>,
    /// Seed of the window-label permutation used by the chance control.
    pub shuffle_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        let welch = WelchSpec::default();
        PipelineConfig {
            band_low_hz: pre.band_low_hz,
            band_high_hz: pre.band_high_hz,
            band_order: pre.band_order,
            car: pre.car,
            filter_mode: pre.filter_mode,
            win_len_s: pre.win_len_s,
            step_s: pre.step_s,
            features: FeatureKind::Psd,
            psd_layout: PsdLayout::PerChannel,
            welch_nperseg: welch.nperseg,
            welch_noverlap: welch.noverlap,
            psd_band_hz: Some([pre.band_low_hz, pre.band_high_hz]),
            pca_k: None,
            classifier: ClassifierKind::Lda,
            lda_tol: LdaOptions::default().tol,
            thetas: default_thetas(),
            deltas: default_deltas(),
            objective: ObjectiveKind::Lexicographic,
            weight_incorrect: 1.0,
            weight_timeout: 0.5,
            sweep_ks: vec![50, 100, 200, 400, 800, 1600],
            shuffle_seed: 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadConfig(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            preprocess: PreprocessConfig {
                band_low_hz: self.band_low_hz,
                band_high_hz: self.band_high_hz,
                band_order: self.band_order,
                car: self.car,
                win_len_s: self.win_len_s,
                step_s: self.step_s,
                filter_mode: self.filter_mode,
            },
            features: FeatureSpec {
                kind: self.features,
                welch: WelchSpec { nperseg: self.welch_nperseg, noverlap: self.welch_noverlap },
                layout: self.psd_layout,
                psd_band_hz: self.psd_band_hz,
            },
            pca_k: self.pca_k,
            classifier: self.classifier,
            lda: LdaOptions { tol: self.lda_tol },
        }
    }

    pub fn objective(&self) -> Objective {
        match self.objective {
            ObjectiveKind::Lexicographic => Objective::Lexicographic,
            ObjectiveKind::Weighted => Objective::Weighted { alpha: self.weight_incorrect, beta: self.weight_timeout },
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !(finite_pos(self.band_low_hz) && self.band_low_hz < self.band_high_hz && self.band_high_hz.is_finite()) {
            return Err(bad(format!("band {}..{} Hz", self.band_low_hz, self.band_high_hz)));
        }
        if ![2, 4, 6, 8].contains(&self.band_order) {
            return Err(bad(format!("band_order {} not in {{2, 4, 6, 8}}", self.band_order)));
        }
        if !finite_pos(self.win_len_s) || !finite_pos(self.step_s) {
            return Err(bad("window length and step must be positive"));
        }
        WelchSpec { nperseg: self.welch_nperseg, noverlap: self.welch_noverlap }.validate()?;
        if let Some([lo, hi]) = self.psd_band_hz {
            if !(lo <= hi && lo >= 0.0) {
                return Err(bad(format!("psd_band_hz {lo}..{hi}")));
            }
        }
        if self.pca_k == Some(0) {
            return Err(bad("pca_k must be at least 1"));
        }
        if !(self.lda_tol >= 0.0 && self.lda_tol.is_finite()) {
            return Err(bad("lda_tol must be non-negative"));
        }
        if self.thetas.is_empty() || self.deltas.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for &t in &self.thetas {
            for &d in &self.deltas {
                EvidenceConfig::new(t, d)?;
            }
        }
        if !(self.weight_incorrect.is_finite() && self.weight_timeout.is_finite()) {
            return Err(bad("objective weights must be finite"));
        }
        if self.sweep_ks.is_empty() || self.sweep_ks.contains(&0) {
            return Err(bad("sweep_ks must be non-empty and positive"));
        }
        Ok(())
    }

    /// Checks that depend on the recording layout.
    pub fn validate_for(&self, fs: f64, n_channels: usize) -> Result<()> {
        self.validate()?;
        let dc = self.decoder_config();
        dc.preprocess.bandpass(fs).validate()?;
        let spec = dc.preprocess.window_spec(fs)?;
        if self.car && n_channels < 2 {
            return Err(Error::TooFewChannels(n_channels));
        }
        let ex = FeatureExtractor::new(dc.features, fs, spec.win_len, n_channels)?;
        if let Some(k) = self.pca_k {
            if k > ex.dim() {
                return Err(Error::BadK { k, max: ex.dim() });
            }
        }
        Ok(())
    }
}
