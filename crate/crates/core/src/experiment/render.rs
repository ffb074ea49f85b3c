use std::fmt::Write as _;
use std::path::Path;

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::signal_io::StageLabel;

/// Hypnogram rows from top to bottom.
const ROWS: [StageLabel; 5] = [
    StageLabel::W,
    StageLabel::Rem,
    StageLabel::N1,
    StageLabel::N2,
    StageLabel::N3,
];

fn row_of(l: StageLabel) -> usize {
    ROWS.iter().position(|&r| r == l).expect("every stage has a row")
}

fn check(truth: &[StageLabel], predicted: &[StageLabel]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("empty hypnogram"));
    }
    if truth.len() != predicted.len() {
        return Err(Error::shape(format!(
            "ground truth has {} epochs, prediction {}",
            truth.len(),
            predicted.len()
        )));
    }
    Ok(())
}

/// One character per epoch per stage row; `#` marks the epoch's stage.
pub fn render_hypnogram_text(truth: &[StageLabel], predicted: &[StageLabel]) -> Result<String> {
    check(truth, predicted)?;
    let mut s = String::new();
    for (title, track) in [("ground truth", truth), ("prediction", predicted)] {
        let _ = writeln!(s, "{title}");
        for r in ROWS {
            let line: String = track.iter().map(|&l| if l == r { '#' } else { '.' }).collect();
            let _ = writeln!(s, "{:<4}{line}", r.mnemonic());
        }
    }
    Ok(s)
}

const WIDTH: f64 = 1000.0;
const LEFT: f64 = 60.0;
const ROW_H: f64 = 16.0;
const TRACK_GAP: f64 = 36.0;

fn track_path(track: &[StageLabel], top: f64) -> String {
    let step = (WIDTH - LEFT - 10.0) / track.len() as f64;
    let y = |l: StageLabel| top + (row_of(l) as f64 + 0.5) * ROW_H;
    let mut d = format!("M{:.2},{:.2}", LEFT, y(track[0]));
    for (n, &l) in track.iter().enumerate() {
        let x0 = LEFT + n as f64 * step;
        if n > 0 && l != track[n - 1] {
            let _ = write!(d, " L{x0:.2},{:.2}", y(l));
        }
        let _ = write!(d, " L{:.2},{:.2}", x0 + step, y(l));
    }
    d
}

/// Ground truth above prediction as two step plots.
pub fn render_hypnogram_svg(truth: &[StageLabel], predicted: &[StageLabel]) -> Result<String> {
    check(truth, predicted)?;
    let track_h = ROW_H * ROWS.len() as f64;
    let height = 2.0 * (track_h + TRACK_GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (title, track)) in [("ground truth", truth), ("prediction", predicted)]
        .into_iter()
        .enumerate()
    {
        let top = i as f64 * (track_h + TRACK_GAP) + TRACK_GAP - 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{:.2}" font-family="sans-serif" font-size="12">{title}</text>"#,
            top - 8.0
        );
        for (r, l) in ROWS.iter().enumerate() {
            let y = top + (r as f64 + 0.5) * ROW_H;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 3.5,
                l.mnemonic()
            );
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd" stroke-width="0.5"/>"##,
                WIDTH - 10.0
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            track_path(track, top)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the SVG to `out` and the text rendering next to it with a `.txt`
/// extension.
pub fn render_hypnogram(truth: &[StageLabel], predicted: &[StageLabel], out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    let svg = render_hypnogram_svg(truth, predicted)?;
    let text = render_hypnogram_text(truth, predicted)?;
    write_atomic(out, svg.as_bytes())?;
    write_atomic(&out.with_extension("txt"), text.as_bytes())
}
