//! Comparison tables with published reference numbers.

use std::fmt::Write as _;

use gdpp::data::Benchmark;
use gdpp::loss::GdppVariant;
use gdpp::report::SeedAggregate;

/// Published `(modes, %HQ)` for a method on a benchmark.
pub type Reference = Option<(f64, f64)>;

/// Plain GAN and GDPP-GAN, averaged over five seeds.
pub fn table1_reference(gdpp: bool, benchmark: Benchmark) -> Reference {
    Some(match (gdpp, benchmark) {
        (false, Benchmark::Ring) => (1.0, 99.3),
        (false, Benchmark::Grid) => (3.3, 0.5),
        (false, Benchmark::HighDim) => (1.6, 2.0),
        (true, Benchmark::Ring) => (8.0, 71.7),
        (true, Benchmark::Grid) => (24.8, 68.5),
        (true, Benchmark::HighDim) => (7.4, 48.3),
    })
}

/// Loss ablation on ring and grid.
pub fn ablation_reference(variant: GdppVariant, benchmark: Benchmark) -> Reference {
    let (ring, grid) = match variant {
        GdppVariant::ExactDeterminant => ((8.0, 82.9), (12.6, 21.7)),
        GdppVariant::MagnitudeOnly => ((8.0, 67.0), (20.4, 15.9)),
        GdppVariant::StructureOnly => ((8.0, 65.2), (18.2, 35.2)),
        GdppVariant::UnnormalizedStructure => ((7.2, 81.2), (20.6, 68.8)),
        GdppVariant::Full => ((8.0, 71.7), (24.8, 68.5)),
    };
    match benchmark {
        Benchmark::Ring => Some(ring),
        Benchmark::Grid => Some(grid),
        Benchmark::HighDim => None,
    }
}

/// One method on one benchmark.
pub struct Cell {
    pub method: String,
    pub benchmark: Benchmark,
    pub max_modes: usize,
    pub aggregate: Option<SeedAggregate>,
    pub failed: usize,
    pub reference: Reference,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// Markdown table; failed seeds are counted and a cell with no successful
/// seed is marked `FAILED`.
pub fn render_markdown(title: &str, cells: &[Cell]) -> String {
    let mut out = format!("## {title}\n\n");
    out.push_str("| method | benchmark | modes (mean) | modes (median) | %HQ (mean) | KL (mean) | ref. modes | ref. %HQ | seeds ok |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for c in cells {
        let total = c.aggregate.as_ref().map_or(0, |a| a.runs) + c.failed;
        let ok = c.aggregate.as_ref().map_or(0, |a| a.runs);
        let (modes, median, hq, kl) = match &c.aggregate {
            Some(a) => (
                format!("{:.1} / {}", a.mean_modes, c.max_modes),
                format!("{:.1}", a.median_modes),
                format!("{:.1}", 100.0 * a.mean_hq),
                format!("{:.3}", a.mean_kl),
            ),
            None => ("FAILED".into(), "-".into(), "-".into(), "-".into()),
        };
        writeln!(
            out,
            "| {} | {} | {modes} | {median} | {hq} | {kl} | {} | {} | {ok}/{total} |",
            c.method,
            c.benchmark,
            fmt_opt(c.reference.map(|r| r.0), 1),
            fmt_opt(c.reference.map(|r| r.1), 1),
        )
        .unwrap();
    }
    out
}

pub fn render_csv(cells: &[Cell], manifest: &str) -> String {
    let mut out = format!("# manifest {manifest}\n");
    out.push_str("method,benchmark,runs,failed,mean_modes,median_modes,mean_hq,mean_kl,ref_modes,ref_hq_percent\n");
    let num = |v: Option<f64>| v.map(gdpp::report::format_f64).unwrap_or_default();
    for c in cells {
        let a = c.aggregate.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.method,
            c.benchmark,
            a.map_or(0, |a| a.runs),
            c.failed,
            num(a.map(|a| a.mean_modes)),
            num(a.map(|a| a.median_modes)),
            num(a.map(|a| a.mean_hq)),
            num(a.map(|a| a.mean_kl)),
            num(c.reference.map(|r| r.0)),
            num(c.reference.map(|r| r.1)),
        )
        .unwrap();
    }
    out
}
