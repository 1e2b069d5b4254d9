//! Minimal static SVG charts for ablation tables and learning curves.

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 46.0;
const MB: f64 = 64.0;

fn frame(title: &str, ylabel: &str, y_max: f64, body: &str) -> String {
    let plot_h = H - MT - MB;
    let mut grid = String::new();
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = H - MB - plot_h * i as f64 / 4.0;
        grid.push_str(&format!(
            "<line x1='{ML}' y1='{y:.1}' x2='{:.1}' y2='{y:.1}' stroke='#ddd'/>\
             <text x='{:.1}' y='{:.1}' font-size='11' text-anchor='end'>{v:.3}</text>",
            W - MR,
            ML - 6.0,
            y + 4.0
        ));
    }
    format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{W}' height='{H}' viewBox='0 0 {W} {H}'>\
         <rect width='{W}' height='{H}' fill='white'/>\
         <text x='{:.1}' y='24' font-size='15' text-anchor='middle' font-weight='bold'>{}</text>\
         <text x='16' y='{:.1}' font-size='12' text-anchor='middle' transform='rotate(-90 16 {:.1})'>{}</text>\
         {grid}{body}\
         <line x1='{ML}' y1='{:.1}' x2='{:.1}' y2='{:.1}' stroke='black'/>\
         </svg>",
        W / 2.0,
        esc(title),
        H / 2.0,
        H / 2.0,
        esc(ylabel),
        H - MB,
        W - MR,
        H - MB,
    )
}

/// Grouped bar chart: one bar per label with per-seed markers.
pub fn bar_chart(title: &str, ylabel: &str, labels: &[String], medians: &[f64], seeds: &[Vec<f64>]) -> String {
    assert_eq!(labels.len(), medians.len());
    let y_max = seeds
        .iter()
        .flatten()
        .chain(medians.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-9)
        * 1.15;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let n = labels.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = slot * 0.55;
    let mut body = String::new();
    for (i, label) in labels.iter().enumerate() {
        let x0 = ML + slot * i as f64 + (slot - bar_w) / 2.0;
        let h = plot_h * (medians[i] / y_max);
        let y0 = H - MB - h;
        body.push_str(&format!(
            "<rect x='{x0:.1}' y='{y0:.1}' width='{bar_w:.1}' height='{h:.1}' fill='#4878cf'/>"
        ));
        for &v in &seeds[i] {
            let yv = H - MB - plot_h * (v / y_max);
            body.push_str(&format!(
                "<circle cx='{:.1}' cy='{yv:.1}' r='3' fill='#d1452c'/>",
                x0 + bar_w / 2.0
            ));
        }
        body.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='middle'>{}</text>\
             <text x='{:.1}' y='{:.1}' font-size='10' text-anchor='middle'>{:.3}</text>",
            x0 + bar_w / 2.0,
            H - MB + 16.0,
            esc(label),
            x0 + bar_w / 2.0,
            y0 - 4.0,
            medians[i]
        ));
    }
    frame(title, ylabel, y_max, &body)
}

const SERIES_COLORS: [&str; 4] = ["#4878cf", "#d1452c", "#38a05e", "#8a62b8"];

/// Line chart with one polyline per named series.
pub fn line_chart(title: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let y_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.1))
        .fold(0.0f64, |a, b| a.max(b))
        .max(1e-9)
        * 1.15;
    let x_min = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(f64::INFINITY, f64::min);
    let x_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(x_min + 1e-9);
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let px = |x: f64| ML + plot_w * (x - x_min) / (x_max - x_min);
    let py = |y: f64| H - MB - plot_h * (y / y_max);
    let mut body = String::new();
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        body.push_str(&format!(
            "<polyline points='{}' fill='none' stroke='{color}' stroke-width='2'/>",
            path.join(" ")
        ));
        for &(x, y) in pts {
            body.push_str(&format!(
                "<circle cx='{:.1}' cy='{:.1}' r='3' fill='{color}'/>",
                px(x),
                py(y)
            ));
        }
        body.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='12' fill='{color}'>{}</text>",
            W - MR - 150.0,
            MT + 16.0 * si as f64,
            esc(name)
        ));
    }
    for &(x, _) in series.first().map(|(_, p)| p.as_slice()).unwrap_or(&[]) {
        body.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='10' text-anchor='middle'>{x:.0}</text>",
            px(x),
            H - MB + 14.0
        ));
    }
    frame(title, ylabel, y_max, &body)
}
