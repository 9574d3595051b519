//! Minimal SVG overlays: domain outline, shaded cell sets and trajectories.

use std::fmt::Write;

use crate::geometry::{CellDecomposition, CellId, Domain};
use crate::linalg::Point;

/// Accumulates SVG elements in world coordinates (first two axes).
pub struct SvgCanvas {
    lo: [f64; 2],
    hi: [f64; 2],
    scale: f64,
    body: String,
}

impl SvgCanvas {
    /// Canvas covering the bounding box of `domain`, `width` pixels wide.
    pub fn new(domain: &Domain, width: f64) -> Self {
        let (lo, hi) = domain.bounding_box();
        let pad = 0.02 * (hi[0] - lo[0]);
        let lo = [lo[0] - pad, lo[1] - pad];
        let hi = [hi[0] + pad, hi[1] + pad];
        SvgCanvas {
            lo,
            hi,
            scale: width / (hi[0] - lo[0]),
            body: String::new(),
        }
    }

    fn px(&self, p: &[f64]) -> (f64, f64) {
        ((p[0] - self.lo[0]) * self.scale, (self.hi[1] - p[1]) * self.scale)
    }

    pub fn domain(&mut self, domain: &Domain) -> &mut Self {
        match domain {
            Domain::Disk { center, radius } => {
                let (cx, cy) = self.px(center);
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="none" stroke="black" stroke-width="1.5"/>"#,
                    radius * self.scale
                );
            }
            Domain::Box { lo, hi } => {
                let (x, y) = self.px(&[lo[0], hi[1]]);
                let _ = writeln!(
                    self.body,
                    r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black" stroke-width="1.5"/>"#,
                    (hi[0] - lo[0]) * self.scale,
                    (hi[1] - lo[1]) * self.scale
                );
            }
        }
        self
    }

    /// Shades the squares of `cells`.
    pub fn cells(&mut self, dec: &CellDecomposition, cells: &[CellId], fill: &str, opacity: f64) -> &mut Self {
        let _ = writeln!(
            self.body,
            r#"<g fill="{fill}" fill-opacity="{opacity:.3}" stroke="none">"#
        );
        for &id in cells {
            let c = dec.cell(id);
            let (x, y) = self.px(&[c.square_lo[0], c.square_hi[1]]);
            let _ = writeln!(
                self.body,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}"/>"#,
                (c.square_hi[0] - c.square_lo[0]) * self.scale,
                (c.square_hi[1] - c.square_lo[1]) * self.scale
            );
        }
        self.body.push_str("</g>\n");
        self
    }

    pub fn polyline(&mut self, points: &[Point], stroke: &str) -> &mut Self {
        let pts: Vec<String> = points
            .iter()
            .map(|p| {
                let (x, y) = self.px(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
        self
    }

    pub fn marker(&mut self, p: &[f64], fill: &str) -> &mut Self {
        let (x, y) = self.px(p);
        let _ = writeln!(self.body, r#"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="{fill}"/>"#);
        self
    }

    pub fn label(&mut self, p: &[f64], text: &str) -> &mut Self {
        let (x, y) = self.px(p);
        let _ = writeln!(
            self.body,
            r#"<text x="{:.3}" y="{:.3}" font-size="12" font-family="sans-serif">{text}</text>"#,
            x + 4.0,
            y - 4.0
        );
        self
    }

    pub fn finish(&self) -> String {
        let w = (self.hi[0] - self.lo[0]) * self.scale;
        let h = (self.hi[1] - self.lo[1]) * self.scale;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.3} {h:.3}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

/// Fill colors cycled per agent.
pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_basic_elements() {
        let dom = Domain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let dec = CellDecomposition::build_grid(dom.clone(), 0.5).unwrap();
        let mut c = SvgCanvas::new(&dom, 200.0);
        c.domain(&dom)
            .cells(&dec, &[0, 1], PALETTE[0], 0.4)
            .polyline(&[vec![0.0, 0.0], vec![0.5, 0.5]], "black")
            .marker(&[0.0, 0.0], "red")
            .label(&[0.0, 0.0], "a");
        let s = c.finish();
        assert!(s.starts_with("<svg"));
        assert_eq!(s.matches("<rect x=").count(), 2);
        assert!(s.contains("<polyline"));
        assert_eq!(s, c.finish());
    }
}
