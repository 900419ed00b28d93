//! The Table-1 evaluation suite: landmark quality, SSIM / mask-SSIM,
//! recognition rates per region, recognizer-attention head contribution, and
//! the landmark detection success ratio, computed per obfuscation method
//! over the TEST probes.

pub mod baselines;
pub mod detector;
pub mod recognizer;
pub mod saliency;
pub mod ssim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{obfuscate_head, BodyCrop, ObfuscationMode};
use crate::error::{CoreError, Result};
use crate::headgan::InpaintBundle;
use crate::landmark::{normalized_l2, LandmarkSet};
use crate::lmgan::{DecoderVariant, LmganBundle};

pub use baselines::{nn_head_copy_paste, nn_landmarks, GalleryItem};
pub use detector::{ldsr, FaceDetector, TemplateDetector};
pub use recognizer::{
    recognition_rate, train_feature_net, FeatureNet, FeatureNetConfig, RecogSample, Recognizer,
    RecognizerRegion,
};
pub use saliency::{head_contribution, max_inside_mask, saliency_map};
pub use ssim::{mask_ssim, ssim, ssim_map};

/// Where the landmarks for an inpainting row come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkMethod {
    Detected,
    NnLandmarks,
    Generated { variant: DecoderVariant },
}

/// One row of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodSpec {
    /// Unmodified originals.
    Original,
    /// Nearest-neighbour head copy-paste on originals.
    NnHeadCopyPaste,
    /// Plain obfuscation, no inpainting.
    NoInpaint { mode: ObfuscationMode },
    /// Obfuscation followed by landmark-conditioned inpainting.
    Inpaint {
        mode: ObfuscationMode,
        landmarks: LandmarkMethod,
    },
}

impl MethodSpec {
    pub fn id(&self) -> String {
        fn mode_str(m: &ObfuscationMode) -> &'static str {
            match m {
                ObfuscationMode::Original => "original",
                ObfuscationMode::Black => "black",
                ObfuscationMode::Blur => "blur",
            }
        }
        match self {
            MethodSpec::Original => "original".into(),
            MethodSpec::NnHeadCopyPaste => "nn-head-copy-paste".into(),
            MethodSpec::NoInpaint { mode } => format!("{}-none", mode_str(mode)),
            MethodSpec::Inpaint { mode, landmarks } => {
                let lm = match landmarks {
                    LandmarkMethod::Detected => "detected".to_string(),
                    LandmarkMethod::NnLandmarks => "nn-landmarks".to_string(),
                    LandmarkMethod::Generated { variant } => format!("gen-{variant}"),
                };
                format!("{}-{lm}", mode_str(mode))
            }
        }
    }

    pub fn input_str(&self) -> &'static str {
        match self {
            MethodSpec::Original | MethodSpec::NnHeadCopyPaste => "original",
            MethodSpec::NoInpaint { mode } | MethodSpec::Inpaint { mode, .. } => match mode {
                ObfuscationMode::Black => "black",
                ObfuscationMode::Blur => "blur",
                ObfuscationMode::Original => "original",
            },
        }
    }

    pub fn landmark_source_str(&self) -> String {
        match self {
            MethodSpec::Inpaint { landmarks, .. } => match landmarks {
                LandmarkMethod::Detected => "detected".into(),
                LandmarkMethod::NnLandmarks => "nn-landmarks".into(),
                LandmarkMethod::Generated { variant } => format!("generated-{variant}"),
            },
            _ => "none".into(),
        }
    }

    /// The full Table-1-shaped default row set.
    pub fn default_rows() -> Vec<MethodSpec> {
        use DecoderVariant::*;
        use ObfuscationMode::*;
        let mut rows = vec![
            MethodSpec::Original,
            MethodSpec::NnHeadCopyPaste,
            MethodSpec::NoInpaint { mode: Blur },
            MethodSpec::Inpaint {
                mode: Blur,
                landmarks: LandmarkMethod::Detected,
            },
        ];
        for v in [Scratch, AeDec, PdmDec] {
            rows.push(MethodSpec::Inpaint {
                mode: Blur,
                landmarks: LandmarkMethod::Generated { variant: v },
            });
        }
        rows.push(MethodSpec::NoInpaint { mode: Black });
        rows.push(MethodSpec::Inpaint {
            mode: Black,
            landmarks: LandmarkMethod::Detected,
        });
        rows.push(MethodSpec::Inpaint {
            mode: Black,
            landmarks: LandmarkMethod::NnLandmarks,
        });
        for v in [Scratch, AeDec, PdmDec] {
            rows.push(MethodSpec::Inpaint {
                mode: Black,
                landmarks: LandmarkMethod::Generated { variant: v },
            });
        }
        rows
    }
}

/// One TEST probe: the original crop (with ground-truth landmarks) and its
/// identity.
pub struct ProbeCase {
    pub crop: BodyCrop,
    pub identity: u32,
}

/// Trained models the evaluation draws on. Inpainters are per input mode;
/// landmark generators per (mode, decoder variant).
#[derive(Default)]
pub struct EvalModels {
    pub inpaint_black: Option<InpaintBundle>,
    pub inpaint_blur: Option<InpaintBundle>,
    pub lmgens: Vec<((ObfuscationMode, DecoderVariant), LmganBundle)>,
}

impl EvalModels {
    fn inpainter(&mut self, mode: ObfuscationMode) -> Option<&mut InpaintBundle> {
        match mode {
            ObfuscationMode::Black => self.inpaint_black.as_mut(),
            ObfuscationMode::Blur => self.inpaint_blur.as_mut(),
            ObfuscationMode::Original => None,
        }
    }

    fn lmgen(
        &mut self,
        mode: ObfuscationMode,
        variant: DecoderVariant,
    ) -> Option<&mut LmganBundle> {
        self.lmgens
            .iter_mut()
            .find(|((m, v), _)| *m == mode && *v == variant)
            .map(|(_, b)| b)
    }
}

/// Table-1-shaped record for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub input: String,
    pub landmark_source: String,
    pub l2: Option<f64>,
    pub norm_l2: Option<f64>,
    pub ssim: f64,
    pub mask_ssim: Option<f64>,
    pub rec_rate_head: f64,
    pub rec_rate_head_body: f64,
    pub head_contrib: f64,
    pub ldsr: f64,
    pub chance_level: f64,
    pub num_probes: usize,
}

impl EvalReport {
    /// Rates and ratios in [0, 1]; SSIM in [-1, 1].
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::InvalidInput(format!(
                    "{name} = {v} out of [0, 1] in row {}",
                    self.method
                )));
            }
            Ok(())
        };
        unit("rec_rate_head", self.rec_rate_head)?;
        unit("rec_rate_head_body", self.rec_rate_head_body)?;
        unit("head_contrib", self.head_contrib)?;
        unit("ldsr", self.ldsr)?;
        unit("chance_level", self.chance_level)?;
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(CoreError::InvalidInput(format!(
                "ssim = {} out of [-1, 1]",
                self.ssim
            )));
        }
        if let Some(m) = self.mask_ssim {
            if !(-1.0..=1.0).contains(&m) {
                return Err(CoreError::InvalidInput(format!(
                    "mask_ssim = {m} out of [-1, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedRow {
    pub method: String,
    pub reason: String,
}

/// Per-image audit record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub method: String,
    pub probe_id: u64,
    pub identity: u32,
    pub landmark_l2: Option<f64>,
    pub ssim: f64,
    pub mask_ssim: Option<f64>,
    pub pred_head: u32,
    pub pred_head_body: u32,
    pub head_contrib: bool,
    pub detected: bool,
}

pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub skipped: Vec<SkippedRow>,
    pub records: Vec<ProbeRecord>,
}

/// Processed probes for one method: images plus optional landmark errors.
fn method_probes(
    spec: &MethodSpec,
    probes: &[ProbeCase],
    gallery: &[GalleryItem],
    models: &mut EvalModels,
) -> Result<Vec<(crate::img::RgbImage, Option<crate::landmark::LandmarkError>)>> {
    let mut out = Vec::with_capacity(probes.len());
    for p in probes {
        let gt = p.crop.landmarks.as_ref().ok_or_else(|| {
            CoreError::InvalidInput("probe crop without ground-truth landmarks".into())
        })?;
        match spec {
            MethodSpec::Original => out.push((p.crop.image.clone(), None)),
            MethodSpec::NnHeadCopyPaste => out.push((nn_head_copy_paste(&p.crop, gallery)?, None)),
            MethodSpec::NoInpaint { mode } => {
                let obf = obfuscate_head(&p.crop, *mode)?;
                out.push((obf.image, None));
            }
            MethodSpec::Inpaint { mode, landmarks } => {
                let obf = obfuscate_head(&p.crop, *mode)?;
                let lms: LandmarkSet = match landmarks {
                    LandmarkMethod::Detected => gt.clone(),
                    LandmarkMethod::NnLandmarks => nn_landmarks(gt, gallery)?.0,
                    LandmarkMethod::Generated { variant } => {
                        let bundle = models.lmgen(*mode, *variant).ok_or_else(|| {
                            CoreError::MissingArtifact {
                                name: format!("lmgen {mode:?}/{variant}"),
                                hint: "train the stage-I generator for this row".into(),
                            }
                        })?;
                        crate::lmgan::generate_landmarks(bundle, &obf)?
                    }
                };
                let err = normalized_l2(&lms, gt);
                let inpainter =
                    models
                        .inpainter(*mode)
                        .ok_or_else(|| CoreError::MissingArtifact {
                            name: format!("inpainter for {mode:?}"),
                            hint: "train the stage-II inpainter for this input mode".into(),
                        })?;
                let result = crate::headgan::inpaint(inpainter, &obf, &lms)?;
                out.push((result.composited, Some(err)));
            }
        }
    }
    Ok(out)
}

/// Compute every configured row. Rows whose checkpoints are missing are
/// skipped with a reason rather than failing the whole run.
#[allow(clippy::too_many_arguments)]
pub fn run_table1(
    methods: &[MethodSpec],
    probes: &[ProbeCase],
    gallery: &[GalleryItem],
    models: &mut EvalModels,
    rec_head: &mut Recognizer,
    rec_head_body: &mut Recognizer,
    face_detector: &dyn FaceDetector,
    saliency_sigma: f64,
) -> Result<EvalOutput> {
    let mut output = EvalOutput {
        reports: Vec::new(),
        skipped: Vec::new(),
        records: Vec::new(),
    };
    for spec in methods {
        let processed = match method_probes(spec, probes, gallery, models) {
            Ok(p) => p,
            Err(CoreError::MissingArtifact { name, hint }) => {
                output.skipped.push(SkippedRow {
                    method: spec.id(),
                    reason: format!("missing checkpoint `{name}`: {hint}"),
                });
                continue;
            }
            Err(e) => return Err(e),
        };

        let mut l2_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut lm_count = 0usize;
        let mut ssim_sum = 0.0;
        let mut mask_sum = 0.0;
        let mut mask_count = 0usize;
        let mut head_hits = 0usize;
        let mut hb_hits = 0usize;
        let mut contrib_hits = 0usize;
        let mut detected_hits = 0usize;

        for (p, (img, lm_err)) in probes.iter().zip(&processed) {
            let s = ssim(img, &p.crop.image)?;
            let ms = mask_ssim(img, &p.crop.image, &p.crop.head_mask)?;
            let sample = RecogSample {
                image: img.clone(),
                head_rect: p.crop.mask_rect(),
                identity: p.identity,
            };
            let (pred_h, _) = rec_head.predict(&sample);
            let (pred_hb, _) = rec_head_body.predict(&sample);
            let contrib =
                head_contribution(rec_head_body, &sample, &p.crop.head_mask, saliency_sigma)?;
            let det = face_detector.detect(img).is_some();

            if let Some(err) = lm_err {
                l2_sum += err.l2;
                if let Some(n) = err.norm_l2 {
                    norm_sum += n;
                }
                lm_count += 1;
            }
            ssim_sum += s;
            if let Some(m) = ms {
                mask_sum += m;
                mask_count += 1;
            }
            head_hits += usize::from(pred_h == p.identity);
            hb_hits += usize::from(pred_hb == p.identity);
            contrib_hits += usize::from(contrib);
            detected_hits += usize::from(det);

            output.records.push(ProbeRecord {
                method: spec.id(),
                probe_id: p.crop.source_id,
                identity: p.identity,
                landmark_l2: lm_err.map(|e| e.l2),
                ssim: s,
                mask_ssim: ms,
                pred_head: pred_h,
                pred_head_body: pred_hb,
                head_contrib: contrib,
                detected: det,
            });
        }

        let n = probes.len();
        let report = EvalReport {
            method: spec.id(),
            input: spec.input_str().to_string(),
            landmark_source: spec.landmark_source_str(),
            l2: (lm_count > 0).then(|| l2_sum / lm_count as f64),
            norm_l2: (lm_count > 0).then(|| norm_sum / lm_count as f64),
            ssim: ssim_sum / n as f64,
            mask_ssim: (mask_count > 0).then(|| mask_sum / mask_count as f64),
            rec_rate_head: head_hits as f64 / n as f64,
            rec_rate_head_body: hb_hits as f64 / n as f64,
            head_contrib: contrib_hits as f64 / n as f64,
            ldsr: detected_hits as f64 / n as f64,
            chance_level: rec_head_body.chance,
            num_probes: n,
        };
        report.validate()?;
        output.reports.push(report);
    }
    Ok(output)
}

pub const CSV_HEADER: &str = "method,input,landmark_source,l2,norm_l2,ssim,mask_ssim,rec_head,rec_head_body,head_contrib,ldsr,chance_level,num_probes";

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "/".to_string(),
    }
}

/// Write `eval_report.csv` (exactly the documented column schema) and
/// `eval_report.json` (per-image records for auditing).
pub fn write_reports(output: &EvalOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &output.reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.input,
            r.landmark_source,
            opt(r.l2),
            opt(r.norm_l2),
            r.ssim,
            opt(r.mask_ssim),
            r.rec_rate_head,
            r.rec_rate_head_body,
            r.head_contrib,
            r.ldsr,
            r.chance_level,
            r.num_probes
        ));
    }
    let csv_path = dir.join("eval_report.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CoreError::io(&csv_path, e))?;

    let json = serde_json::json!({
        "reports": output.reports,
        "skipped": output.skipped,
        "records": output.records,
    });
    let json_path = dir.join("eval_report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&json).unwrap())
        .map_err(|e| CoreError::io(&json_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_are_stable() {
        assert_eq!(MethodSpec::Original.id(), "original");
        assert_eq!(
            MethodSpec::NoInpaint {
                mode: ObfuscationMode::Black
            }
            .id(),
            "black-none"
        );
        assert_eq!(
            MethodSpec::Inpaint {
                mode: ObfuscationMode::Blur,
                landmarks: LandmarkMethod::Generated {
                    variant: DecoderVariant::PdmDec
                }
            }
            .id(),
            "blur-gen-pdmdec"
        );
    }

    #[test]
    fn default_rows_cover_the_table_shape() {
        let rows = MethodSpec::default_rows();
        assert_eq!(rows.len(), 13);
        let ids: Vec<String> = rows.iter().map(|r| r.id()).collect();
        assert!(ids.contains(&"original".to_string()));
        assert!(ids.contains(&"nn-head-copy-paste".to_string()));
        assert!(ids.contains(&"black-nn-landmarks".to_string()));
        assert!(ids.contains(&"blur-gen-aedec".to_string()));
    }

    #[test]
    fn report_validation_rejects_out_of_range_rates() {
        let mut r = EvalReport {
            method: "x".into(),
            input: "black".into(),
            landmark_source: "none".into(),
            l2: None,
            norm_l2: None,
            ssim: 0.5,
            mask_ssim: None,
            rec_rate_head: 0.5,
            rec_rate_head_body: 0.5,
            head_contrib: 0.5,
            ldsr: 0.5,
            chance_level: 0.1,
            num_probes: 10,
        };
        assert!(r.validate().is_ok());
        r.rec_rate_head = 1.5;
        assert!(r.validate().is_err());
    }
}