use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use bead_core::baselines::greedy_regulate;
use bead_core::cache::{Provenance, SolutionCache};
use bead_core::metrics::{compare_events, CompareConfig, CorpusMetrics};
use bead_core::model::split_measure;
use bead_core::paraff::{decode_topology, generate_sample, parse_text, GenerateConfig, PromptConfig};
use bead_core::picker::{OraclePicker, RuleBasedPicker, TablePicker};
use bead_core::quality::{evaluate_fix, evaluate_measure, Fix, QualityReport};
use bead_core::solver::MeasureSolve;
use bead_core::timebase::{vtick_decode_wide, vtick_encode_wide, VtickCode};
use bead_core::{
    solve_measure, solve_multipass, MeasureInput, MeasureInstance, Picker, RegulationSolution, SolverConfig, Status,
};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde_json::json;

use crate::io::{indexed_path, read_gold, read_records, to_output};
use crate::svg::emit_timeline_svg;
use crate::{CompareArgs, EvaluateArgs, GenerateArgs, ParaffCommand, RegulateArgs, Strategy, VtickCommand};

fn solver_config(a: &RegulateArgs) -> SolverConfig {
    SolverConfig {
        quota_factor: a.quota_factor,
        pt_factor: a.pt_factor,
        stop_loss: a.stop_loss,
        pre_pass: a.pre_pass,
        ..SolverConfig::default()
    }
}

struct Pickers {
    gold: BTreeMap<i64, RegulationSolution>,
    table: Option<TablePicker>,
}

fn solve_one(
    m: &MeasureInstance,
    a: &RegulateArgs,
    config: &SolverConfig,
    p: &Pickers,
) -> anyhow::Result<RegulationSolution> {
    let search = |picker: &dyn Picker| -> anyhow::Result<MeasureSolve> {
        let solve = if a.multipass { solve_multipass(m, picker, config)? } else { solve_measure(m, picker, config)? };
        info!("m{}: loss {:.4}", m.measure_index, solve.loss);
        Ok(solve)
    };
    Ok(match a.strategy {
        Strategy::Greedy => greedy_regulate(m),
        Strategy::RulebasedSearch => search(&RuleBasedPicker::default())?.solution,
        Strategy::Oracle => {
            let gold =
                p.gold.get(&m.measure_index).with_context(|| format!("no gold for measure {}", m.measure_index))?;
            search(&OraclePicker::new(gold))?.solution
        }
        Strategy::Table => search(p.table.as_ref().expect("table loaded"))?.solution,
    })
}

pub fn regulate(a: &RegulateArgs) -> anyhow::Result<String> {
    let inputs = read_records::<MeasureInput>(&a.input)?;
    let measures = inputs.items.iter().map(split_measure).collect::<Result<Vec<_>, _>>()?;
    for m in &measures {
        for w in &m.warnings {
            warn!("m{}: {w}", m.measure_index);
        }
    }
    debug!("seed {} (the solver is deterministic)", a.seed);

    let pickers = Pickers {
        gold: match &a.gold {
            Some(path) => read_gold(path)?.into_iter().map(|g| (g.measure_index, g)).collect(),
            None if a.strategy == Strategy::Oracle => bail!("--strategy oracle needs --gold"),
            None => BTreeMap::new(),
        },
        table: match (&a.table, a.strategy) {
            (Some(path), _) => Some(TablePicker::load(path)?),
            (None, Strategy::Table) => bail!("--strategy table needs --table"),
            _ => None,
        },
    };
    let config = solver_config(a);

    let mut cache = a.cache.as_ref().map(SolutionCache::open).transpose()?;
    let cached: Vec<Option<RegulationSolution>> =
        measures.iter().map(|m| cache.as_ref().and_then(|c| c.lookup(m))).collect();
    let solutions = measures
        .par_iter()
        .zip(cached.par_iter())
        .map(|(m, hit)| match hit {
            Some(s) => {
                info!("m{}: cache hit", m.measure_index);
                Ok(s.clone())
            }
            None => solve_one(m, a, &config, &pickers),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    if let Some(cache) = cache.as_mut() {
        for ((m, s), hit) in measures.iter().zip(&solutions).zip(&cached) {
            if hit.is_none() && evaluate_measure(s).fine {
                cache.store(m, s, Provenance::AutoFine)?;
            }
        }
    }
    for (m, s) in measures.iter().zip(&solutions) {
        if s.status != Status::Solved {
            warn!("m{}: status {:?}", m.measure_index, s.status);
        }
    }

    if let Some(path) = &a.emit_svg {
        for (m, s) in measures.iter().zip(&solutions) {
            let target = if solutions.len() == 1 { path.clone() } else { indexed_path(path, m.measure_index) };
            fs::write(&target, emit_timeline_svg(s, Some(m)))
                .with_context(|| format!("writing {}", target.display()))?;
        }
    }
    to_output(&solutions, inputs.single)
}

pub fn evaluate(a: &EvaluateArgs) -> anyhow::Result<String> {
    let solutions = read_records::<RegulationSolution>(&a.solution)?;
    let Some(patch) = &a.patch else {
        let reports: Vec<QualityReport> = solutions.items.iter().map(evaluate_measure).collect();
        return to_output(&reports, solutions.single);
    };
    let fixes = read_records::<Fix>(patch)?;
    let mut outcomes = Vec::with_capacity(fixes.items.len());
    for fix in &fixes.items {
        let target = match fix.measure_index {
            Some(i) => solutions.items.iter().find(|s| s.measure_index == i),
            None if solutions.items.len() == 1 => solutions.items.first(),
            None => bail!("fix without measureIndex against {} solutions", solutions.items.len()),
        }
        .context("fix targets a measure not in the solution file")?;
        outcomes.push(evaluate_fix(target, fix));
    }
    if a.json {
        return to_output(&outcomes, fixes.single);
    }
    Ok(outcomes.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("\n\n"))
}

fn empty_solution(gold: &RegulationSolution) -> RegulationSolution {
    let mut s = RegulationSolution { voices: Vec::new(), events: Vec::new(), status: Status::Fatal, ..gold.clone() };
    s.rebuild_adjacency();
    s
}

pub fn compare(a: &CompareArgs) -> anyhow::Result<String> {
    let pred = read_records::<RegulationSolution>(&a.pred)?.items;
    let gold = read_gold(&a.gold)?;
    let by_index: BTreeMap<i64, &RegulationSolution> = pred.iter().map(|p| (p.measure_index, p)).collect();
    for p in &pred {
        if !gold.iter().any(|g| g.measure_index == p.measure_index) {
            warn!("m{}: prediction has no gold", p.measure_index);
        }
    }
    let config = CompareConfig::default();
    let mut metrics = CorpusMetrics::default();
    let mut out = String::new();
    if a.per_measure && !a.json {
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>11} {:>10} {:>15}",
            "measure", "perfect", "voiceMatch", "tickExact", "anyFieldError"
        );
    }
    for g in &gold {
        let missing;
        let p = match by_index.get(&g.measure_index) {
            Some(p) => *p,
            None => {
                warn!("m{}: no prediction", g.measure_index);
                missing = empty_solution(g);
                &missing
            }
        };
        let tiers = metrics.add(p, g, &config);
        if a.per_measure && !a.json {
            let any = compare_events(p, g, &config).any_field_error();
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>11} {:>10} {:>15.4}",
                g.measure_index, tiers.perfect, tiers.voice_match, tiers.tick_exact, any
            );
        }
    }
    if a.json {
        let summary = json!({
            "measures": metrics.measures,
            "anyFieldError": metrics.events.any_field_error(),
            "tickRmse": metrics.events.tick_rmse(),
            "perfectPct": metrics.perfect_pct(),
            "voiceMatchPct": metrics.voice_match_pct(),
            "tickExactPct": metrics.tick_exact_pct(),
            "counts": metrics,
        });
        return Ok(serde_json::to_string_pretty(&summary)?);
    }
    if a.per_measure {
        out.push('\n');
    }
    let rows = [
        ("Any-field error", format!("{:.4}", metrics.events.any_field_error())),
        ("Tick RMSE", format!("{:.3}", metrics.events.tick_rmse())),
        ("Perfect %", format!("{:.2}", metrics.perfect_pct())),
        ("Voice match %", format!("{:.2}", metrics.voice_match_pct())),
        ("Tick exact %", format!("{:.2}", metrics.tick_exact_pct())),
    ];
    let _ = writeln!(out, "{:<16} {:>10}", format!("measures={}", metrics.measures), "value");
    for (label, value) in rows {
        let _ = writeln!(out, "{label:<16} {value:>10}");
    }
    Ok(out.trim_end().to_string())
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate_config(min_voices: u8, max_voices: u8) -> anyhow::Result<GenerateConfig> {
    ensure!(
        (1..=max_voices).contains(&min_voices) && max_voices <= 4,
        "voice bounds must satisfy 1 <= min <= max <= 4"
    );
    Ok(GenerateConfig {
        prompt: PromptConfig { min_voices, max_voices, ..PromptConfig::default() },
        ..GenerateConfig::default()
    })
}

pub fn generate(a: &GenerateArgs) -> anyhow::Result<String> {
    let config = generate_config(a.min_voices, a.max_voices)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let width = a.count.saturating_sub(1).to_string().len().max(4);
    let files = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let sample = generate_sample(a.seed, i as u64, &config)?;
            let topo = a.out.join(format!("m{i:0width$}.topo.json"));
            let cluster = a.out.join(format!("m{i:0width$}.cluster.json"));
            write_pretty(&topo, &sample)?;
            write_pretty(&cluster, &sample.to_measure_input())?;
            Ok(json!({ "topo": topo, "cluster": cluster }))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    info!("wrote {} samples to {}", a.count, a.out.display());
    Ok(serde_json::to_string_pretty(&json!({ "seed": a.seed, "count": a.count, "files": files }))?)
}

fn vtick_json(quotient: u32, code: &VtickCode) -> serde_json::Value {
    json!({
        "tick": vtick_decode_wide(quotient, code),
        "quotient": quotient,
        "digits": code.digits,
        "vector": code.to_vector(),
    })
}

pub fn vtick(c: &VtickCommand) -> anyhow::Result<String> {
    let value = match c {
        VtickCommand::Encode { tick } => {
            let (q, code) = vtick_encode_wide(*tick);
            vtick_json(q, &code)
        }
        VtickCommand::Decode { vector, quotient } => vtick_json(*quotient, &VtickCode::from_vector(vector)?),
    };
    Ok(serde_json::to_string(&value)?)
}

pub fn paraff(c: &ParaffCommand) -> anyhow::Result<String> {
    match c {
        ParaffCommand::Parse { file, seed } => {
            let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            let lines: Vec<(usize, &str)> = text
                .lines()
                .enumerate()
                .map(|(i, l)| (i, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
                .collect();
            ensure!(!lines.is_empty(), "{} holds no sentences", file.display());
            let mut samples = Vec::with_capacity(lines.len());
            for (k, (line_no, line)) in lines.iter().enumerate() {
                let ast = parse_text(line).with_context(|| format!("line {}", line_no + 1))?;
                let mut sample = decode_topology(&ast, seed.wrapping_add(k as u64))
                    .with_context(|| format!("line {}", line_no + 1))?;
                sample.sentence = line.to_string();
                sample.measure_index = k as i64;
                samples.push(sample);
            }
            let single = samples.len() == 1;
            to_output(&samples, single)
        }
        ParaffCommand::Sample { count, seed, min_voices, max_voices } => {
            let config = generate_config(*min_voices, *max_voices)?;
            let sentences = (0..*count as u64)
                .into_par_iter()
                .map(|i| Ok(generate_sample(*seed, i, &config)?.sentence))
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(sentences.join("\n"))
        }
    }
}
