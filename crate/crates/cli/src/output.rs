//! CSV, JSON and SVG writers.

use clwn_core::ode::FlowResult;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// Fixed 17-significant-digit decimal.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub const FLOW_HEADER: [&str; 6] = ["seed_re", "seed_im", "t", "g_re", "g_im", "swallowed"];

/// One row per trajectory sample; `swallowed` is 1 on the final row of a
/// swallowed seed and 0 elsewhere.
pub fn flow_rows(flows: &[FlowResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for f in flows {
        let n = f.values.len();
        for (i, (t, g)) in f.times.iter().zip(&f.values).enumerate() {
            let sw = f.swallowed() && i + 1 == n;
            rows.push(vec![
                num(f.seed.re),
                num(f.seed.im),
                num(*t),
                num(g.re),
                num(g.im),
                u8::from(sw).to_string(),
            ]);
        }
    }
    rows
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Static plot with one polyline per curve, y axis pointing up.
pub fn write_svg(path: &Path, curves: &[Vec<(f64, f64)>]) -> Result<(), CliError> {
    const SIZE: f64 = 600.0;
    const PAD: f64 = 20.0;
    let pts = curves.iter().flatten().filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (SIZE - 2.0 * PAD) / span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for c in curves {
        let coords: Vec<String> = c
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    PAD + (x - x0) * scale,
                    SIZE - PAD - (y - y0) * scale
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#,
            coords.join(" ")
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn trajectories(flows: &[FlowResult]) -> Vec<Vec<(f64, f64)>> {
    flows
        .iter()
        .map(|f| f.values.iter().map(|g| (g.re, g.im)).collect())
        .collect()
}
