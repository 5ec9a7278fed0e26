//! SVG storyboard frames of a trace.
//!
//! Agents are drawn at their coordinates with a marker whose shape encodes
//! the category (square, circle, triangle, then pentagon, hexagon, ...) and
//! whose area is proportional to the resource. Each multi-member group gets
//! a translucent convex hull in its own color; a pair degenerates to a
//! segment. Output is plain text with fixed number formatting, so identical
//! inputs give identical files.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::SimTrace;
use crate::model::{Partition, Point, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("iteration {requested} not in trace (0..={last})")]
    UnknownIteration { requested: usize, last: usize },
    #[error("canvas must be at least {min} pixels, got {got}")]
    CanvasTooSmall { got: u32, min: u32 },
    #[error("partition covers {partition} agents but scenario has {scenario}")]
    SizeMismatch { partition: usize, scenario: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrameSelection {
    /// Start state, every accepted update, and the last iteration.
    Keyframes,
    Iterations(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub frames: FrameSelection,
    /// Width and height in pixels.
    pub canvas: u32,
    pub legend: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            frames: FrameSelection::Keyframes,
            canvas: 480,
            legend: true,
        }
    }
}

pub const MIN_CANVAS: u32 = 64;

const GROUP_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
const CATEGORY_FILLS: [&str; 6] = [
    "#9ecae1", "#fdae6b", "#a1d99b", "#bcbddc", "#fdd0a2", "#c7e9c0",
];

/// Iterations to draw for `spec` (sorted, deduplicated).
pub fn select_frames(trace: &SimTrace, spec: &RenderSpec) -> Result<Vec<usize>, RenderError> {
    let last = trace.total_iterations;
    let mut frames = match &spec.frames {
        FrameSelection::Keyframes => {
            let mut v = vec![0];
            v.extend(trace.accepted_events().map(|e| e.iteration));
            v.push(last);
            v
        }
        FrameSelection::Iterations(list) => {
            if let Some(&bad) = list.iter().find(|&&i| i > last) {
                return Err(RenderError::UnknownIteration {
                    requested: bad,
                    last,
                });
            }
            list.clone()
        }
    };
    frames.sort_unstable();
    frames.dedup();
    Ok(frames)
}

/// One SVG document per selected iteration.
pub fn render_trace(
    trace: &SimTrace,
    scenario: &Scenario,
    spec: &RenderSpec,
) -> Result<Vec<(usize, String)>, RenderError> {
    select_frames(trace, spec)?
        .into_iter()
        .map(|it| {
            let partition = trace
                .partition_at(it)
                .ok_or(RenderError::UnknownIteration {
                    requested: it,
                    last: trace.total_iterations,
                })?;
            let title = if it == 0 {
                "initialization".to_string()
            } else {
                format!("iteration {it}")
            };
            render_frame(scenario, partition, &title, spec).map(|svg| (it, svg))
        })
        .collect()
}

struct Frame {
    scale: f64,
    min: Point,
    margin: f64,
    size: f64,
}

impl Frame {
    fn new(scenario: &Scenario, size: f64) -> Self {
        let (mut lo, mut hi) = (
            Point::new(f64::MAX, f64::MAX),
            Point::new(f64::MIN, f64::MIN),
        );
        for a in scenario.agents() {
            lo.x = lo.x.min(a.position.x);
            lo.y = lo.y.min(a.position.y);
            hi.x = hi.x.max(a.position.x);
            hi.y = hi.y.max(a.position.y);
        }
        if scenario.is_empty() {
            lo = Point::new(0.0, 0.0);
            hi = Point::new(1.0, 1.0);
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        let span = if span > 0.0 { span } else { 1.0 };
        let margin = size * 0.12;
        Frame {
            scale: (size - 2.0 * margin) / span,
            min: lo,
            margin,
            size,
        }
    }

    /// Data to pixel coordinates, y pointing up.
    fn map(&self, p: Point) -> Point {
        Point::new(
            self.margin + (p.x - self.min.x) * self.scale,
            self.size - self.margin - (p.y - self.min.y) * self.scale,
        )
    }
}

/// Andrew's monotone chain; returns hull vertices counter-clockwise without
/// repeating the first. Collinear input collapses to its two extremes.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn marker(shape: usize, center: Point, area: f64, fill: &str) -> String {
    let (cx, cy) = (center.x, center.y);
    match shape {
        0 => {
            let side = area.sqrt();
            format!(
                r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="{fill}" stroke="black" stroke-width="1"/>"#,
                cx - side / 2.0,
                cy - side / 2.0
            )
        }
        1 => format!(
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="{fill}" stroke="black" stroke-width="1"/>"#,
            (area / PI).sqrt()
        ),
        _ => {
            // triangle, pentagon, hexagon, ... of the requested area
            let sides = if shape == 2 { 3 } else { shape + 2 };
            let n = sides as f64;
            let radius = (2.0 * area / (n * (2.0 * PI / n).sin())).sqrt();
            let pts: Vec<String> = (0..sides)
                .map(|i| {
                    let t = -PI / 2.0 + 2.0 * PI * i as f64 / n;
                    format!("{:.2},{:.2}", cx + radius * t.cos(), cy + radius * t.sin())
                })
                .collect();
            format!(
                r#"<polygon points="{}" fill="{fill}" stroke="black" stroke-width="1"/>"#,
                pts.join(" ")
            )
        }
    }
}

fn category_label(c: usize) -> String {
    format!("c{}", c + 1)
}

pub fn render_frame(
    scenario: &Scenario,
    partition: &Partition,
    title: &str,
    spec: &RenderSpec,
) -> Result<String, RenderError> {
    if spec.canvas < MIN_CANVAS {
        return Err(RenderError::CanvasTooSmall {
            got: spec.canvas,
            min: MIN_CANVAS,
        });
    }
    if partition.agent_count() != scenario.len() {
        return Err(RenderError::SizeMismatch {
            partition: partition.agent_count(),
            scenario: scenario.len(),
        });
    }
    let size = spec.canvas as f64;
    let frame = Frame::new(scenario, size);
    let max_resource = scenario
        .agents()
        .iter()
        .map(|a| a.resource)
        .fold(0.0, f64::max);
    let max_area = (size * 0.07).powi(2);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        spec.canvas
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{0}" height="{0}" fill="white"/>"#,
        spec.canvas
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        size / 2.0,
        size * 0.06,
        xml_escape(title)
    );

    let _ = writeln!(svg, r#"<g id="groups">"#);
    let multi = partition.canonical().into_iter().filter(|g| g.len() >= 2);
    for (ordinal, members) in multi.enumerate() {
        let color = GROUP_COLORS[ordinal % GROUP_COLORS.len()];
        let pts: Vec<Point> = members
            .iter()
            .map(|&id| frame.map(scenario.agents()[id].position))
            .collect();
        let hull = convex_hull(&pts);
        let coords: Vec<String> = hull
            .iter()
            .map(|p| format!("{:.2},{:.2}", p.x, p.y))
            .collect();
        let ids: Vec<String> = members.iter().map(ToString::to_string).collect();
        if hull.len() >= 3 {
            let _ = writeln!(
                svg,
                r#"<polygon data-members="{}" points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2" stroke-linejoin="round"/>"#,
                ids.join(" "),
                coords.join(" ")
            );
        } else {
            let _ = writeln!(
                svg,
                r#"<polyline data-members="{}" points="{}" fill="none" stroke="{color}" stroke-width="2" stroke-linecap="round"/>"#,
                ids.join(" "),
                coords.join(" ")
            );
        }
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g id="agents">"#);
    for a in scenario.agents() {
        let area = max_area * a.resource / max_resource;
        let c = a.category.index();
        let _ = writeln!(
            svg,
            "{}",
            marker(
                c,
                frame.map(a.position),
                area,
                CATEGORY_FILLS[c % CATEGORY_FILLS.len()]
            )
        );
    }
    let _ = writeln!(svg, "</g>");

    if spec.legend {
        let _ = writeln!(
            svg,
            r#"<g id="legend" font-family="sans-serif" font-size="11">"#
        );
        let step = 16.0;
        for c in 0..scenario.k() {
            let y = size - 8.0 - step * (scenario.k() - 1 - c) as f64;
            let _ = writeln!(
                svg,
                "{}",
                marker(
                    c,
                    Point::new(12.0, y - 4.0),
                    64.0,
                    CATEGORY_FILLS[c % CATEGORY_FILLS.len()]
                )
            );
            let _ = writeln!(
                svg,
                r#"<text x="24.00" y="{y:.2}">{}</text>"#,
                category_label(c)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::run_to_convergence;
    use crate::model::{Agent, GameConfig};
    use crate::persistence::example2_scenario;

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&Point::new(1.0, 1.0)));
    }

    #[test]
    fn hull_degenerates() {
        let line = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
        ];
        assert_eq!(
            convex_hull(&line),
            vec![Point::new(0.0, 0.0), Point::new(2.0, 2.0)]
        );
        assert_eq!(convex_hull(&[Point::new(1.0, 1.0)]).len(), 1);
    }

    #[test]
    fn initialization_frame_has_markers_only() {
        let s = example2_scenario();
        let svg = render_frame(
            &s,
            &Partition::singletons(9),
            "initialization",
            &RenderSpec::default(),
        )
        .unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let agents = doc
            .descendants()
            .find(|n| n.attribute("id") == Some("agents"))
            .unwrap();
        assert_eq!(agents.children().filter(|n| n.is_element()).count(), 9);
        assert!(!svg.contains("data-members"));
        // 3 squares, 3 circles, 3 triangles
        assert_eq!(
            agents.children().filter(|n| n.has_tag_name("rect")).count(),
            3
        );
        assert_eq!(
            agents
                .children()
                .filter(|n| n.has_tag_name("circle"))
                .count(),
            3
        );
        assert_eq!(
            agents
                .children()
                .filter(|n| n.has_tag_name("polygon"))
                .count(),
            3
        );
    }

    #[test]
    fn marker_area_tracks_resource() {
        let s = Scenario::new(
            2,
            vec![
                Agent::new(0, 1, 1.0, 0.0, 0.0),
                Agent::new(1, 1, 4.0, 1.0, 1.0),
            ],
        )
        .unwrap();
        let svg = render_frame(&s, &Partition::singletons(2), "t", &RenderSpec::default()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let radii: Vec<f64> = doc
            .descendants()
            .filter(|n| n.has_tag_name("circle"))
            .map(|n| n.attribute("r").unwrap().parse().unwrap())
            .collect();
        assert!((radii[1] / radii[0] - 2.0).abs() < 0.01);
    }

    #[test]
    fn single_agent_frame() {
        let s = Scenario::new(3, vec![Agent::new(0, 2, 5.0, 3.0, 3.0)]).unwrap();
        let svg = render_frame(&s, &Partition::singletons(1), "x", &RenderSpec::default()).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn keyframes_cover_start_accepts_and_end() {
        let s = example2_scenario();
        let t = run_to_convergence(&s, &GameConfig::default(), 7, 1000).unwrap();
        let frames = select_frames(&t, &RenderSpec::default()).unwrap();
        assert_eq!(frames[0], 0);
        assert_eq!(*frames.last().unwrap(), t.total_iterations);
        assert_eq!(frames.len(), t.accepted_events().count() + 2);
        let bad = RenderSpec {
            frames: FrameSelection::Iterations(vec![t.total_iterations + 1]),
            ..RenderSpec::default()
        };
        assert!(matches!(
            select_frames(&t, &bad),
            Err(RenderError::UnknownIteration { .. })
        ));
    }

    #[test]
    fn frames_are_well_formed_and_hull_counts_match_groups() {
        let s = example2_scenario();
        let t = run_to_convergence(&s, &GameConfig::default(), 2, 1000).unwrap();
        for (it, svg) in render_trace(&t, &s, &RenderSpec::default()).unwrap() {
            let doc = roxmltree::Document::parse(&svg).unwrap();
            let hulls = doc
                .descendants()
                .filter(|n| n.attribute("data-members").is_some())
                .count();
            let expected = t
                .partition_at(it)
                .unwrap()
                .groups()
                .filter(|(_, g)| g.len() >= 2)
                .count();
            assert_eq!(hulls, expected);
            assert!(!svg.contains("href"));
        }
    }

    #[test]
    fn extra_categories_get_polygons() {
        let s = Scenario::new(
            5,
            (0..5)
                .map(|i| Agent::new(i, i, 1.0, i as f64, 0.0))
                .collect(),
        )
        .unwrap();
        let svg =
            render_frame(&s, &Partition::singletons(5), "k5", &RenderSpec::default()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let counts: Vec<usize> = doc
            .descendants()
            .filter(|n| n.has_tag_name("polygon"))
            .map(|n| n.attribute("points").unwrap().split(' ').count())
            .collect();
        assert!(counts.contains(&5) && counts.contains(&6) && counts.contains(&3));
    }
}
