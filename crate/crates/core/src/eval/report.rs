//! Report files: metrics and curve CSVs plus heatmap images.
//!
//! Every writer formats numbers the same way on every run, so reruns with
//! identical inputs produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::methods::ScoredTraj;
use crate::eval::roc::RocPoint;
use crate::eval::testset::TestSet;
use crate::eval::trials::TrialResult;
use crate::tensor::Tensor;

/// One summary row: a method's rates on one failure kind.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: String,
    pub failure_kind: String,
    pub det_sr: Option<f64>,
    pub han_sr: Option<f64>,
    pub mean_time_s: Option<f64>,
    pub n: usize,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::format(path, &e.to_string()))?;
    f.write_all(bytes).map_err(|e| Error::format(path, &e.to_string()))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Writes the summary table; an empty row list still writes the header.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("method,failure_kind,det_sr,han_sr,mean_time_s,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.failure_kind,
            fmt_opt(r.det_sr),
            fmt_opt(r.han_sr),
            fmt_opt(r.mean_time_s),
            r.n
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes one method's ROC sweep.
pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<()> {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
    }
    write_atomic(path, out.as_bytes())
}

/// One recognition sample: a bin's score on a gated frame plus its label.
#[derive(Debug, Clone)]
pub struct BinRow {
    pub traj: usize,
    pub frame: usize,
    pub score: f64,
    pub gt: bool,
}

/// Collects recognition rows for bin `k` from scored trajectories.
pub fn bin_rows(ts: &TestSet, scored: &[ScoredTraj], k: usize) -> Vec<BinRow> {
    assert!(k < 3, "bin index out of range: {k}");
    let mut rows = Vec::new();
    for st in scored {
        let traj = &ts.trajs[st.traj];
        for (frame, sums) in st.bin_sums.iter().enumerate() {
            if let Some(s) = sums {
                rows.push(BinRow {
                    traj: st.traj,
                    frame,
                    score: s[k],
                    gt: traj.gt_bins[frame][k],
                });
            }
        }
    }
    rows
}

/// Writes one bin's recognition samples.
pub fn write_bins_csv(path: &Path, rows: &[BinRow]) -> Result<()> {
    let mut out = String::from("traj,frame,score,gt\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.traj,
            r.frame,
            r.score,
            r.gt as u8
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes the raw per-trial log.
pub fn write_trials_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut out =
        String::from("kind,side,layout,trial,seed,detected,handled,detect_frame,recover_frame,time_s\n");
    for r in results {
        let frame = |f: Option<usize>| f.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.kind.name(),
            r.side.name(),
            r.layout.name(),
            r.trial,
            r.seed,
            r.detected as u8,
            r.handled as u8,
            frame(r.detect_frame),
            frame(r.recover_frame),
            fmt_opt(r.recovery_time_s)
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a heatmap as an 8-bit binary PGM, max-normalized per frame; an
/// all-zero (or negative-max) map writes as black.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let shape = map.shape();
    if shape.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "pgm export expects a 2-D map, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let max = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(h * w);
    for &v in map.data() {
        let px = if max > 0.0 {
            (255.0 * (v / max).clamp(0.0, 1.0)).round() as u8
        } else {
            0
        };
        bytes.push(px);
    }
    write_atomic(path, &bytes)
}

/// Exports up to `cap` heatmap snapshots for a method, named by trajectory
/// and frame, in trajectory order.
pub fn export_heatmaps(
    dir: &Path,
    method: &str,
    scored: &[ScoredTraj],
    cap: usize,
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for st in scored {
        if written.len() >= cap {
            break;
        }
        if let Some((frame, map)) = &st.snapshot {
            let path = dir.join(format!("heat_{method}_t{:04}_f{frame:03}.pgm", st.traj));
            write_pgm(&path, map)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn empty_tables_keep_their_headers() {
        let dir = tempdir().unwrap();
        let m = dir.path().join("metrics.csv");
        write_metrics_csv(&m, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&m).unwrap(),
            "method,failure_kind,det_sr,han_sr,mean_time_s,n\n"
        );
        let b = dir.path().join("bins.csv");
        write_bins_csv(&b, &[]).unwrap();
        assert_eq!(fs::read_to_string(&b).unwrap(), "traj,frame,score,gt\n");
        let t = dir.path().join("trials.csv");
        write_trials_csv(&t, &[]).unwrap();
        assert!(fs::read_to_string(&t).unwrap().starts_with("kind,side,layout"));
    }

    #[test]
    fn metrics_rows_format_missing_fields_as_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![MetricsRow {
            method: "informed".into(),
            failure_kind: "blackout".into(),
            det_sr: Some(95.0),
            han_sr: Some(90.0),
            mean_time_s: None,
            n: 10,
        }];
        write_metrics_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.ends_with("informed,blackout,95.0000,90.0000,,10\n"));
    }

    #[test]
    fn rewrites_are_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("roc.csv");
        let points = vec![
            RocPoint {
                fpr: 0.0,
                tpr: 0.0,
                threshold: f64::INFINITY,
            },
            RocPoint {
                fpr: 1.0 / 3.0,
                tpr: 0.7,
                threshold: 0.123456789,
            },
        ];
        write_roc_csv(&path, &points).unwrap();
        let first = fs::read(&path).unwrap();
        write_roc_csv(&path, &points).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert!(String::from_utf8(first).unwrap().contains("inf"));
    }

    #[test]
    fn pgm_is_max_normalized_binary() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let map = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 4.0, 3.0, 0.5]).unwrap();
        write_pgm(&path, &map).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 64, 128, 255, 191, 32]);

        // An all-zero map stays black instead of dividing by zero.
        let zero = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        write_pgm(&path, &zero).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 0]);
    }
}
