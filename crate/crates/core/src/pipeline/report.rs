use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{erle, si_snr, Waveform};

/// Activity frame length for segment classification (10 ms).
pub const SEGMENT_FRAME: usize = 160;

/// Frames quieter than this fraction of the loudest frame are inactive.
const ACTIVITY_GATE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Silence,
    NearSingleTalk,
    FarSingleTalk,
    DoubleTalk,
}

fn activity(x: &[f64]) -> Vec<bool> {
    let energies: Vec<f64> = x
        .chunks(SEGMENT_FRAME)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
        .collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    let gated: Vec<bool> = energies
        .iter()
        .map(|&e| e > 0.0 && e > ACTIVITY_GATE * peak)
        .collect();
    // One frame of hangover.
    (0..gated.len())
        .map(|i| gated[i] || (i > 0 && gated[i - 1]))
        .collect()
}

/// Labels each 10 ms frame from the ground-truth near-end target and echo.
pub fn classify_segments(target: &[f64], echo: &[f64]) -> Vec<Segment> {
    activity(target)
        .into_iter()
        .zip(activity(echo))
        .map(|(near, far)| match (near, far) {
            (false, false) => Segment::Silence,
            (true, false) => Segment::NearSingleTalk,
            (false, true) => Segment::FarSingleTalk,
            (true, true) => Segment::DoubleTalk,
        })
        .collect()
}

/// Ground truth for one evaluated stream. Any part may be unknown.
#[derive(Clone, Debug, Default)]
pub struct Truth {
    /// Reverberant near-end speech.
    pub target: Option<Waveform>,
    pub mic: Waveform,
    /// Echo component, or the far-end reference when the echo is unknown.
    pub echo: Option<Waveform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub num_samples: usize,
    pub mic_rms_dbfs: f64,
    pub enhanced_rms_dbfs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub frames: usize,
    pub seconds: f64,
    /// Enhanced output against the target; absent when the target is silent
    /// over the segment.
    pub si_snr_db: Option<f64>,
    /// Unprocessed microphone signal against the target.
    pub input_si_snr_db: Option<f64>,
}

/// Evaluation report. Every metric needing ground truth is absent when that
/// truth is missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub signal: SignalStats,
    pub si_snr_db: Option<f64>,
    pub input_si_snr_db: Option<f64>,
    /// Microphone over output power during far-end single talk.
    pub erle_db: Option<f64>,
    pub near_single_talk: Option<SegmentMetrics>,
    pub far_single_talk: Option<SegmentMetrics>,
    pub double_talk: Option<SegmentMetrics>,
}

fn rms_dbfs(x: &[f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if ms > 0.0 {
        10.0 * ms.log10()
    } else {
        -f64::from(u16::MAX)
    }
}

fn defined_si_snr(estimate: &[f64], reference: &[f64]) -> Option<f64> {
    si_snr(estimate, reference).ok()
}

fn gather(x: &[f64], labels: &[Segment], want: Segment) -> Vec<f64> {
    x.chunks(SEGMENT_FRAME)
        .zip(labels)
        .filter(|(_, &l)| l == want)
        .flat_map(|(c, _)| c.iter().copied())
        .collect()
}

pub fn run_metrics(truth: &Truth, enhanced: &Waveform) -> Result<MetricReport> {
    let mic = truth.mic.samples();
    let out = enhanced.samples();
    if mic.len() != out.len() {
        return Err(Error::LengthMismatch {
            left: mic.len(),
            right: out.len(),
        });
    }
    for part in [&truth.target, &truth.echo].into_iter().flatten() {
        if part.len() != mic.len() {
            return Err(Error::LengthMismatch {
                left: mic.len(),
                right: part.len(),
            });
        }
    }
    let signal = SignalStats {
        num_samples: mic.len(),
        mic_rms_dbfs: rms_dbfs(mic),
        enhanced_rms_dbfs: rms_dbfs(out),
    };
    let target = truth.target.as_ref().map(Waveform::samples);
    let (si_snr_db, input_si_snr_db) = match target {
        Some(s) => (defined_si_snr(out, s), defined_si_snr(mic, s)),
        None => (None, None),
    };

    let mut report = MetricReport {
        signal,
        si_snr_db,
        input_si_snr_db,
        erle_db: None,
        near_single_talk: None,
        far_single_talk: None,
        double_talk: None,
    };
    let (Some(s), Some(y)) = (target, truth.echo.as_ref()) else {
        return Ok(report);
    };
    let labels = classify_segments(s, y.samples());
    let segment = |want: Segment| {
        let frames = labels.iter().filter(|&&l| l == want).count();
        let ref_seg = gather(s, &labels, want);
        let out_seg = gather(out, &labels, want);
        let mic_seg = gather(mic, &labels, want);
        SegmentMetrics {
            frames,
            seconds: ref_seg.len() as f64 / f64::from(crate::SAMPLE_RATE),
            si_snr_db: defined_si_snr(&out_seg, &ref_seg),
            input_si_snr_db: defined_si_snr(&mic_seg, &ref_seg),
        }
    };
    report.near_single_talk = Some(segment(Segment::NearSingleTalk));
    report.far_single_talk = Some(segment(Segment::FarSingleTalk));
    report.double_talk = Some(segment(Segment::DoubleTalk));
    let far_mic = gather(mic, &labels, Segment::FarSingleTalk);
    if !far_mic.is_empty() {
        report.erle_db = Some(erle(
            &far_mic,
            &gather(out, &labels, Segment::FarSingleTalk),
        )?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn burst(len: usize, on: std::ops::Range<usize>) -> Vec<f64> {
        (0..len)
            .map(|i| {
                if on.contains(&i) {
                    ((i % 7) as f64 - 3.0) * 0.1 + 0.05
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn segments_follow_construction() {
        // Near active in frames 10..30, far in 20..40, 50 frames total.
        let f = SEGMENT_FRAME;
        let near = burst(50 * f, 10 * f..30 * f);
        let far = burst(50 * f, 20 * f..40 * f);
        let labels = classify_segments(&near, &far);
        for (i, l) in labels.iter().enumerate() {
            // Activity extends one hangover frame past each burst.
            let n = (10..31).contains(&i);
            let e = (20..41).contains(&i);
            let expected = match (n, e) {
                (false, false) => Segment::Silence,
                (true, false) => Segment::NearSingleTalk,
                (false, true) => Segment::FarSingleTalk,
                (true, true) => Segment::DoubleTalk,
            };
            assert_eq!(*l, expected, "frame {i}");
        }
    }

    #[test]
    fn perfect_output_scores_the_ceiling() {
        let f = SEGMENT_FRAME;
        let s = Waveform::new(burst(40 * f, 0..20 * f)).unwrap();
        let y = Waveform::new(burst(40 * f, 10 * f..30 * f)).unwrap();
        let d: Vec<f64> = s
            .samples()
            .iter()
            .zip(y.samples())
            .map(|(a, b)| a + b)
            .collect();
        let truth = Truth {
            target: Some(s.clone()),
            mic: Waveform::new(d.clone()).unwrap(),
            echo: Some(y),
        };
        let r = run_metrics(&truth, &s).unwrap();
        assert_eq!(r.si_snr_db, Some(100.0));
        assert_eq!(r.near_single_talk.as_ref().unwrap().si_snr_db, Some(100.0));
        assert_eq!(r.double_talk.as_ref().unwrap().si_snr_db, Some(100.0));
        assert_eq!(r.erle_db, Some(100.0));

        let passthrough = run_metrics(&truth, &Waveform::new(d).unwrap()).unwrap();
        assert_eq!(passthrough.si_snr_db, passthrough.input_si_snr_db);
        assert_eq!(passthrough.erle_db, Some(0.0));
    }

    #[test]
    fn missing_truth_reports_signal_statistics_only() {
        let mic = Waveform::new(vec![0.5; 1600]).unwrap();
        let truth = Truth {
            mic: mic.clone(),
            ..Default::default()
        };
        let r = run_metrics(&truth, &mic).unwrap();
        assert!(r.si_snr_db.is_none() && r.erle_db.is_none() && r.double_talk.is_none());
        assert!((r.signal.mic_rms_dbfs - 10.0 * 0.25f64.log10()).abs() < 1e-12);
    }
}
