//! 2DSTB maps: each agent's boundary trajectory drawn in the unit square
//! with x = start and y = end.

use std::fmt::Write as _;

use crate::agents::{AgentKind, TraceRecord};
use crate::timeline::{eta, Interval};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;
const LEGEND_W: f64 = 200.0;

struct Style {
    color: &'static str,
    dash: &'static str,
    marker: &'static str,
}

fn style(kind: AgentKind) -> Style {
    match kind {
        AgentKind::Esrl => Style { color: "#1f77b4", dash: "", marker: "circle" },
        AgentKind::EMover => Style { color: "#d62728", dash: "6,3", marker: "square" },
        AgentKind::EDark => Style { color: "#2ca02c", dash: "2,2", marker: "diamond" },
    }
}

fn px(x: f64) -> f64 {
    MARGIN + x * SIZE
}

fn py(y: f64) -> f64 {
    MARGIN + (1.0 - y) * SIZE
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn marker(out: &mut String, shape: &str, x: f64, y: f64, color: &str) {
    let r = 4.0;
    match shape {
        "square" => {
            let _ = writeln!(out, r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}"/>"#, x - r, y - r, 2.0 * r, 2.0 * r);
        }
        "diamond" => {
            let _ = writeln!(
                out,
                r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
                x,
                y - r - 1.0,
                x + r + 1.0,
                y,
                x,
                y + r + 1.0,
                x - r - 1.0,
                y
            );
        }
        _ => {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#);
        }
    }
}

fn star(cx: f64, cy: f64, outer: f64) -> String {
    let inner = outer * 0.45;
    (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// SVG map of one episode's traces. The legend carries the maximum pairwise
/// conflict of the final intervals.
pub fn render_2dstb(traces: &[TraceRecord], gt: Option<Interval>) -> String {
    let w = 2.0 * MARGIN + SIZE + LEGEND_W;
    let h = 2.0 * MARGIN + SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    // Feasible half: end >= start, the triangle above the diagonal.
    let _ = writeln!(
        s,
        r##"<polygon class="feasible" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="#eeeeee"/>"##,
        px(0.0),
        py(0.0),
        px(0.0),
        py(1.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="3,3"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, px(0.0) - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">start</text>"#, px(0.5), h - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" text-anchor="middle" transform="rotate(-90 12 {:.2})">end</text>"#,
        py(0.5),
        py(0.5)
    );

    for tr in traces {
        let st = style(tr.agent);
        let mut pts = vec![Interval::FULL];
        pts.extend(tr.steps.iter().map(|s| s.output));
        pts.dedup();
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.start), py(p.end))).collect();
        let dash = if st.dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{}""#, st.dash) };
        let _ = writeln!(
            s,
            r#"<polyline class="agent {}" points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            tr.agent.name(),
            coords.join(" "),
            st.color
        );
        let mut last = None;
        for (t, step) in std::iter::once((0, Interval::FULL)).chain(tr.steps.iter().map(|s| (s.t + 1, s.output))) {
            if last == Some(step) {
                continue;
            }
            last = Some(step);
            marker(&mut s, st.marker, px(step.start), py(step.end), st.color);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" fill="{}" font-size="9">{t}</text>"#,
                px(step.start) + 5.0,
                py(step.end) - 5.0,
                st.color
            );
        }
    }
    if let Some(g) = gt {
        let _ = writeln!(s, r#"<polygon class="gt" points="{}" fill="gold" stroke="black"/>"#, star(px(g.start), py(g.end), 9.0));
    }

    let lx = 2.0 * MARGIN + SIZE;
    let mut ly = MARGIN;
    let _ = writeln!(s, r#"<g class="legend">"#);
    if let Some(id) = traces.first().map(|t| &t.episode_id) {
        let _ = writeln!(s, r#"<text x="{lx}" y="{ly}" font-weight="bold">{}</text>"#, escape(id));
        ly += 20.0;
    }
    for tr in traces {
        let st = style(tr.agent);
        let dash = if st.dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{}""#, st.dash) };
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.5"{dash}/>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0,
            st.color
        );
        marker(&mut s, st.marker, lx + 12.0, ly - 4.0, st.color);
        let f = tr.final_output;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly}">{} [{:.3}, {:.3}]</text>"#, lx + 30.0, tr.agent.name(), f.start, f.end);
        ly += 18.0;
    }
    if let Some(g) = gt {
        let _ = writeln!(s, r#"<polygon points="{}" fill="gold" stroke="black"/>"#, star(lx + 12.0, ly - 4.0, 6.0));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly}">ground truth [{:.3}, {:.3}]</text>"#, lx + 30.0, g.start, g.end);
        ly += 18.0;
    }
    let finals: Vec<Interval> = traces.iter().map(|t| t.final_output).collect();
    if let Ok(e) = eta(&finals) {
        let _ = writeln!(s, r#"<text class="eta" x="{lx}" y="{ly}" data-eta="{e}">η = {e:.4}</text>"#);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::TraceStep;

    fn record(agent: AgentKind, outputs: &[Interval]) -> TraceRecord {
        TraceRecord {
            episode_id: "ep<1>".into(),
            agent,
            steps: outputs
                .iter()
                .enumerate()
                .map(|(t, &o)| TraceStep { t, region: o, output: o, u: 0.5, p_iou: 0.5 })
                .collect(),
            final_output: *outputs.last().unwrap_or(&Interval::FULL),
        }
    }

    fn points(svg: &str, class: &str) -> Vec<String> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some(class))
            .map(|n| n.attribute("points").unwrap().to_string())
            .collect()
    }

    #[test]
    fn hold_only_traces_are_single_points_at_the_default() {
        let hold = vec![Interval::FULL; 10];
        let traces: Vec<_> = AgentKind::ALL.iter().map(|&k| record(k, &hold)).collect();
        let svg = render_2dstb(&traces, None);
        for k in AgentKind::ALL {
            let p = points(&svg, &format!("agent {}", k.name()));
            assert_eq!(p, vec![format!("{:.2},{:.2}", px(0.0), py(1.0))]);
        }
    }

    #[test]
    fn output_is_wellformed_with_legend_gt_and_feasible_half() {
        let a = record(AgentKind::Esrl, &[Interval::new(0.1, 0.9), Interval::new(0.2, 0.5)]);
        let b = record(AgentKind::EMover, &[Interval::new(0.0, 0.8), Interval::new(0.3, 0.6)]);
        let svg = render_2dstb(&[a, b], Some(Interval::new(0.25, 0.55)));
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert!(doc.descendants().any(|n| n.attribute("class") == Some("legend")));
        assert_eq!(points(&svg, "gt").len(), 1);
        assert_eq!(points(&svg, "feasible").len(), 1);
        let strokes: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class").is_some_and(|c| c.starts_with("agent ")))
            .map(|n| (n.attribute("stroke").unwrap(), n.attribute("stroke-dasharray")))
            .collect();
        assert_ne!(strokes[0], strokes[1]);
        assert!(svg.contains("ep&lt;1&gt;"));
    }

    #[test]
    fn legend_annotation_is_the_conflict_of_the_finals() {
        let finals = [Interval::new(0.1, 0.4), Interval::new(0.5, 0.9), Interval::new(0.2, 0.5)];
        let traces: Vec<_> = AgentKind::ALL.iter().zip(&finals).map(|(&k, &f)| record(k, &[f])).collect();
        let svg = render_2dstb(&traces, None);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let node = doc.descendants().find(|n| n.attribute("class") == Some("eta")).unwrap();
        let annotated: f64 = node.attribute("data-eta").unwrap().parse().unwrap();
        assert_eq!(annotated, eta(&finals).unwrap());
        assert!((annotated - 0.9).abs() < 1e-12);
    }
}
