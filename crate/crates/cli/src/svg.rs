//! Per-voice timeline plot of a regulated measure.

use std::fmt::Write;

use bead_core::evaluator::ratio_f64;
use bead_core::{ElemType, EventAssignment, MeasureInstance, RegulationSolution, DIVISIONS};

/// Horizontal scale, pixels per tick.
pub const PX_PER_TICK: f64 = 0.1;
pub const LANE_HEIGHT: f64 = 24.0;
pub const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

const MARGIN_LEFT: f64 = 36.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 8.0;
const AXIS_HEIGHT: f64 = 24.0;
/// Blocks never shrink below this width so zero-length events stay visible.
const MIN_BLOCK: f64 = 2.0;

/// Effective length of an event in ticks.
fn span(e: &EventAssignment, measure_duration: u32) -> f64 {
    if e.full_measure {
        return measure_duration as f64;
    }
    e.duration().map(ratio_f64).unwrap_or(0.0)
}

/// Render one lane per voice with one block per voiced event spanning
/// `[tick, tick + effective duration]`. Fake and grace events are hollow;
/// rests are drawn lighter when the measure is supplied. Events without a
/// tick are skipped.
pub fn emit_timeline_svg(solution: &RegulationSolution, measure: Option<&MeasureInstance>) -> String {
    let rests: Vec<u32> = measure
        .map(|m| m.events().filter(|e| e.elem_type == ElemType::Rest).map(|e| e.id).collect())
        .unwrap_or_default();
    let events = solution.event_map();

    let end_tick = solution
        .voices
        .iter()
        .flatten()
        .filter_map(|id| events.get(id))
        .filter_map(|e| Some(e.tick? as f64 + span(e, solution.duration)))
        .fold(solution.duration as f64, f64::max);
    let plot_width = end_tick * PX_PER_TICK;
    let width = MARGIN_LEFT + plot_width + MARGIN_RIGHT;
    let lanes_bottom = MARGIN_TOP + solution.voices.len() as f64 * LANE_HEIGHT;
    let height = lanes_bottom + AXIS_HEIGHT;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="9">"#
    );
    let _ = writeln!(out, "<title>measure {}</title>", solution.measure_index);

    for (v, voice) in solution.voices.iter().enumerate() {
        let color = PALETTE[v % PALETTE.len()];
        let top = MARGIN_TOP + v as f64 * LANE_HEIGHT;
        let _ = writeln!(out, r#"<g class="lane" data-voice="{v}">"#);
        let _ =
            writeln!(out, r##"<text x="4" y="{:.1}" fill="{color}">v{}</text>"##, top + LANE_HEIGHT / 2.0 + 3.0, v + 1);
        for id in voice {
            let Some(e) = events.get(id) else { continue };
            let Some(tick) = e.tick else { continue };
            let ticks = span(e, solution.duration);
            let x = MARGIN_LEFT + tick as f64 * PX_PER_TICK;
            let w = (ticks * PX_PER_TICK).max(MIN_BLOCK);
            let paint = if e.fake || e.grace {
                format!(r#"fill="none" stroke="{color}" stroke-width="1.5""#)
            } else if rests.contains(id) {
                format!(r#"fill="{color}" fill-opacity="0.35" stroke="{color}""#)
            } else {
                format!(r#"fill="{color}" stroke="{color}""#)
            };
            let _ = writeln!(
                out,
                r#"<rect class="event" data-id="{id}" data-tick="{tick}" data-ticks="{ticks}" x="{x:.1}" y="{:.1}" width="{w:.1}" height="{:.1}" {paint}><title>#{id} tick {tick}</title></rect>"#,
                top + 3.0,
                LANE_HEIGHT - 6.0
            );
        }
        let _ = writeln!(out, "</g>");
    }

    let _ = writeln!(out, r##"<g class="axis" stroke="#444">"##);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_LEFT:.1}" y1="{lanes_bottom:.1}" x2="{:.1}" y2="{lanes_bottom:.1}"/>"#,
        MARGIN_LEFT + plot_width
    );
    let mut tick = 0u32;
    while tick as f64 <= end_tick {
        let x = MARGIN_LEFT + tick as f64 * PX_PER_TICK;
        let _ =
            writeln!(out, r#"<line x1="{x:.1}" y1="{lanes_bottom:.1}" x2="{x:.1}" y2="{:.1}"/>"#, lanes_bottom + 4.0);
        let _ = writeln!(
            out,
            r##"<text x="{x:.1}" y="{:.1}" text-anchor="middle" stroke="none" fill="#444">{tick}</text>"##,
            lanes_bottom + 14.0
        );
        tick += DIVISIONS;
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}
