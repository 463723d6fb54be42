//! Text tables and SVG plots of a run report.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::report::{LinkReport, RunReport};

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Per-link state, flow, travel time and capacities.
pub fn flow_table(links: &[LinkReport]) -> String {
    let w = links.iter().map(|l| l.id.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<w$}  {:>5}  {:>12}  {:>10}  {:>10}  {:>10}\n",
        "link", "state", "flow", "time_hr", "q_cr", "q_max"
    );
    for l in links {
        let _ = writeln!(
            s,
            "{:<w$}  {:>5}  {:>12.3}  {:>10}  {:>10.3}  {:>10.3}",
            l.id,
            l.state,
            l.flow_veh_hr,
            fmt_opt(l.travel_time_hr, 5),
            l.q_cr_veh_hr,
            l.q_max_veh_hr
        );
    }
    s
}

/// One row per evolution level, plus the bound history of an assign run.
pub fn level_table(report: &RunReport) -> String {
    let mut s = String::new();
    if !report.levels.is_empty() {
        s.push_str("level  status            objective     potential  bottleneck\n");
        for l in &report.levels {
            let status = serde_json::to_value(l.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{:>5}  {:<16}  {:>10}  {:>12}  {}",
                l.index,
                status,
                fmt_opt(l.objective, 2),
                fmt_opt(l.potential, 2),
                if l.bottleneck.is_empty() {
                    "-".to_string()
                } else {
                    l.bottleneck.join(" ")
                }
            );
        }
        let _ = writeln!(s, "verdict: {}", report.status);
    }
    if let Some(b) = &report.bnb {
        s.push_str("iter     lower_bound     upper_bound  live  solves\n");
        for h in &b.history {
            let _ = writeln!(
                s,
                "{:>4}  {:>14.4}  {:>14.4}  {:>4}  {:>6}",
                h.iteration, h.lower_bound, h.upper_bound, h.live, h.cqp_solves
            );
        }
        let _ = writeln!(
            s,
            "bound {:.4}  incumbent {:.4}  gap {:.3e}  iterations {}  solves {}",
            b.lower_bound, b.upper_bound, b.gap, b.iterations, b.cqp_solves
        );
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

/// Travel time against flow on both branches, with the operating point.
pub fn time_flow_svg(link: &LinkReport, delta: f64) -> String {
    let t_cr = link.gamma + link.beta / link.q_max_veh_hr;
    let t_top = link.gamma + link.beta / delta;
    let x_hi = link.q_cr_veh_hr * 1.05;
    let y_hi = t_top.max(t_cr) * 1.05;
    let sx = |x: f64| PAD + x / x_hi * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y_hi * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.1},{:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        PAD,
        PAD,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">flow (veh/hr)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">time (hr)</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle">link {}</text>"#, W / 2.0, link.id);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="steelblue" stroke-width="2"/>"#,
        sx(0.0),
        sy(link.t_free_hr),
        sx(link.q_cr_veh_hr),
        sy(link.t_free_hr + link.alpha * link.q_cr_veh_hr)
    );
    let n = 64;
    let pts: Vec<String> = (0..=n)
        .map(|i| {
            // denser near delta where the curve bends
            let u = (i as f64 / n as f64).powi(2);
            let x = delta + u * (link.q_max_veh_hr - delta);
            format!("{:.1},{:.1}", sx(x), sy(link.gamma + link.beta / x))
        })
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="firebrick" stroke-width="2"/>"#,
        pts.join(" ")
    );
    if let Some(t) = link.travel_time_hr {
        let colour = if link.state == 1 { "steelblue" } else { "firebrick" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{colour}" stroke="black"/>"#,
            sx(link.flow_veh_hr),
            sy(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Nodes on a circle; links in the zone drawn red, others grey.
pub fn network_svg(links: &[LinkReport], zone: &[String], title: &str) -> String {
    let mut nodes: Vec<&str> = Vec::new();
    for l in links {
        for n in [l.tail.as_str(), l.head.as_str()] {
            if !nodes.contains(&n) {
                nodes.push(n);
            }
        }
    }
    let zone: BTreeSet<&str> = zone.iter().map(String::as_str).collect();
    let (cx, cy, r) = (W / 2.0, H / 2.0 + 8.0, H / 2.0 - PAD);
    let pos = |n: &str| {
        let i = nodes.iter().position(|m| *m == n).unwrap_or(0);
        let a = std::f64::consts::TAU * i as f64 / nodes.len().max(1) as f64 - std::f64::consts::FRAC_PI_2;
        (cx + r * a.cos(), cy + r * a.sin())
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    for l in links {
        let (x1, y1) = pos(&l.tail);
        let (x2, y2) = pos(&l.head);
        // offset opposite directions so both are visible
        let (dx, dy) = (x2 - x1, y2 - y1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let (ox, oy) = (-dy / len * 3.0, dx / len * 3.0);
        let jam = zone.contains(l.id.as_str());
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="{}"><title>{} flow {:.1}</title></line>"#,
            x1 + ox,
            y1 + oy,
            x2 + ox,
            y2 + oy,
            if jam { "firebrick" } else { "#999" },
            if jam { 3 } else { 1 },
            l.id,
            l.flow_veh_hr
        );
    }
    for n in &nodes {
        let (x, y) = pos(n);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="10" fill="white" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(id: &str, tail: &str, head: &str, state: u8) -> LinkReport {
        LinkReport {
            id: id.into(),
            tail: tail.into(),
            head: head.into(),
            state,
            flow_veh_hr: 800.0,
            travel_time_hr: Some(0.04),
            alpha: 1e-5,
            beta: 240.0,
            gamma: -0.1,
            t_free_hr: 0.025,
            q_max_veh_hr: 1600.0,
            q_cr_veh_hr: 1680.0,
        }
    }

    #[test]
    fn table_lists_every_link() {
        let t = flow_table(&[link("a-b", "a", "b", 1), link("b-a", "b", "a", 0)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("b-a"));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = time_flow_svg(&link("a-b", "a", "b", 1), 60.0);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("<polyline"));
        let n = network_svg(&[link("a-b", "a", "b", 1), link("b-a", "b", "a", 0)], &["b-a".into()], "level 1");
        assert_eq!(n.matches("firebrick").count(), 1);
        assert_eq!(n.matches("<circle").count(), 2);
    }
}
