//! Minimal log-log SVG plots of decay series.

use std::fmt::Write;

use crate::report::Series;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Data as a polyline (positive samples only) and, when present, the fitted power law as a
/// single `<line class="fit">` over the fit window.
pub fn loglog_plot(s: &Series) -> String {
    let pts: Vec<(f64, f64)> = s
        .times
        .iter()
        .zip(&s.values)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0)
        .map(|(t, v)| (t.log10(), v.log10()))
        .collect();
    let fit_pts = s.fit.map(|f| {
        let (a, b) = f.window;
        [(a.log10(), f.predict(a).log10()), (b.log10(), f.predict(b).log10())]
    });
    let all = pts.iter().chain(fit_pts.iter().flatten());
    let (x0, x1) = range(all.clone().map(|p| p.0));
    let (y0, y1) = range(all.map(|p| p.1));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"##
    );
    let _ = writeln!(out, r##"<title>{}</title>"##, s.name);
    let _ = writeln!(
        out,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="12" text-anchor="middle">log10 t  [{x0:.3}, {x1:.3}]</text>"##,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        out,
        r##"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">log10 {}  [{y0:.3}, {y1:.3}]</text>"##,
        H / 2.0,
        H / 2.0,
        s.name
    );
    let poly: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
    let _ = writeln!(
        out,
        r##"<polyline class="data" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
        poly.join(" ")
    );
    if let (Some([(ax, ay), (bx, by)]), Some(f)) = (fit_pts, s.fit) {
        let _ = writeln!(
            out,
            r##"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="6 3"/>"##,
            sx(ax),
            sy(ay),
            sx(bx),
            sy(by)
        );
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="12" fill="#d62728">slope {:.4}</text>"##,
            PAD + 8.0,
            PAD + 16.0,
            f.exponent
        );
    }
    out.push_str("</svg>\n");
    out
}
