use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::report::{MetricsReport, SequenceReport};
use crate::corruption::NoiseId;
use crate::error::{Error, Result};
use crate::geometry::{integrate, kitti, Pose};

const W: f64 = 720.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

fn write(path: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

fn frame_period(report: &MetricsReport) -> f64 {
    use super::config::DataConfig;
    match report.config.as_ref().map(|c| &c.data) {
        Some(DataConfig::Kitti(k)) => k.frame_period,
        Some(DataConfig::Synthetic(s)) => s.scene.frame_period,
        None => 0.1,
    }
}

/// Writes the report, tables, per-pose CSVs, KITTI trajectories and SVG
/// plots into `dir`. Output depends only on the report, so reruns
/// reproduce the same bytes.
pub fn emit_artifacts(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    write(dir.join("report.json"), &report.to_json(), &mut out)?;
    write(dir.join("tables.txt"), &report.tables(), &mut out)?;
    let period = frame_period(report);
    for s in &report.sequences {
        let stem = s.stem();
        write(dir.join(format!("{stem}.csv")), &pose_csv(s), &mut out)?;
        let pred = integrate(&Pose::identity(), &s.pred_deltas(), period)?;
        let gt = integrate(&Pose::identity(), &s.gt_deltas(), period)?;
        write(dir.join(format!("{stem}_pred.txt")), &kitti::format_poses(pred.poses()), &mut out)?;
        write(dir.join(format!("{stem}_gt.txt")), &kitti::format_poses(gt.poses()), &mut out)?;
        write(dir.join(format!("{stem}_error.svg")), &error_svg(s), &mut out)?;
        write(dir.join(format!("{stem}_traj.svg")), &trajectory_svg(pred.poses(), gt.poses()), &mut out)?;
    }
    Ok(out)
}

/// One row per transition: trace columns, then prediction and truth.
pub fn pose_csv(s: &SequenceReport) -> String {
    let mut c = String::from("t,k,label,L_TTA,t_err,r_err,pred_phi_x,pred_phi_y,pred_phi_z,pred_v_x,pred_v_y,pred_v_z,gt_phi_x,gt_phi_y,gt_phi_z,gt_v_x,gt_v_y,gt_v_z\n");
    for t in 0..s.gt.len() {
        let k = s.ks.get(t).map(|k| k.to_string()).unwrap_or_default();
        let loss = s.loss.get(t).copied().flatten().map(|l| format!("{l:?}")).unwrap_or_default();
        let _ = write!(c, "{t},{k},{},{loss},{:?},{:?}", s.labels[t], s.t_err[t], s.r_err[t]);
        for v in s.pred[t].iter().chain(&s.gt[t]) {
            let _ = write!(c, ",{v:?}");
        }
        c.push('\n');
    }
    c
}

fn color(n: NoiseId) -> &'static str {
    const PALETTE: [&str; 8] = ["#ffffff", "#fde0c5", "#c6dbef", "#d9f0d3", "#e7d4e8", "#fee391", "#d0d1e6", "#f4cae4"];
    PALETTE[n.index() % PALETTE.len()]
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"16\">{title}</text>");
}

/// Pose-wise translation error over time on noise-coloured bands.
pub fn error_svg(s: &SequenceReport) -> String {
    let n = s.t_err.len().max(1) as f64;
    let ymax = s.t_err.iter().cloned().fold(0.0, f64::max).max(1e-9) * 1.05;
    let x = |t: f64| PAD + (W - 2.0 * PAD) * t / n;
    let y = |e: f64| H - PAD - (H - 2.0 * PAD) * e / ymax;
    let mut svg = String::new();
    header(&mut svg, &format!("{}: pose-wise t_rmse", s.stem()));
    let mut start = 0;
    for t in 1..=s.labels.len() {
        if t == s.labels.len() || s.labels[t] != s.labels[start] {
            let l = s.labels[start];
            if l != NoiseId::Clean {
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{}\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{}\">{}</text>",
                    x(start as f64),
                    x(t as f64) - x(start as f64),
                    H - 2.0 * PAD,
                    color(l),
                    x(start as f64) + 2.0,
                    PAD + 12.0,
                    l.name()
                );
            }
            start = t;
        }
    }
    if let Some(w) = s.windows {
        for m in [w.t0, w.t1] {
            let _ = writeln!(
                svg,
                "<line x1=\"{0:.2}\" y1=\"{PAD}\" x2=\"{0:.2}\" y2=\"{1}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
                x(m as f64),
                H - PAD
            );
        }
    }
    let pts: Vec<String> = s
        .t_err
        .iter()
        .enumerate()
        .map(|(t, e)| format!("{:.2},{:.2}", x(t as f64 + 0.5), y(*e)))
        .collect();
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.2\" points=\"{}\"/>", pts.join(" "));
    axes(&mut svg, &format!("{ymax:.4} m"), &format!("{} transitions", s.t_err.len()));
    svg.push_str("</svg>\n");
    svg
}

fn axes(svg: &mut String, ylabel: &str, xlabel: &str) {
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"black\" points=\"{PAD},{PAD} {PAD},{b} {r},{b}\"/>",
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(svg, "<text x=\"4\" y=\"{}\">{ylabel}</text>", PAD - 4.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{xlabel}</text>", W - PAD, H - PAD + 16.0);
}

/// Top-down (x forward, y left) overlay of predicted and true paths.
pub fn trajectory_svg(pred: &[Pose], gt: &[Pose]) -> String {
    let xy = |p: &Pose| (p.t.x, p.t.y);
    let all: Vec<(f64, f64)> = pred.iter().chain(gt).map(xy).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(a, b) in &all {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-6);
    let scale = ((W - 2.0 * PAD).min(H - 2.0 * PAD)) / span;
    // screen right is world -y, screen up is world +x
    let px = |p: &Pose| {
        let (a, b) = xy(p);
        (W / 2.0 - (b - (y0 + y1) / 2.0) * scale, H / 2.0 - (a - (x0 + x1) / 2.0) * scale)
    };
    let line = |ps: &[Pose]| {
        ps.iter()
            .map(|p| {
                let (u, v) = px(p);
                format!("{u:.2},{v:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = String::new();
    header(&mut svg, "trajectory (top view)");
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"{}\"/>", line(gt));
    let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.2\" points=\"{}\"/>", line(pred));
    let _ = writeln!(svg, "<text x=\"{}\" y=\"16\" text-anchor=\"end\">black: ground truth, red: prediction; {span:.1} m span</text>", W - PAD);
    svg.push_str("</svg>\n");
    svg
}
