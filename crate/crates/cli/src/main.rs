use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use snapkit::critical::{transition_graph, FlowOptions};
use snapkit::energy::{DensityFunction, DensityMode};
use snapkit::framework::Framework;
use snapkit::pipeline::{self, Analysis, AnalysisOptions, Engine};
use snapkit::rigidity::{landscape_shakiness, SHAKY_TOL};
use snapkit::sg::{Manipulator, Metric};
use snapkit::{fixtures, polysolve::SolveError, ModelError, SnapError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

/// Snappability and singularity distance of pin-jointed body-bar frameworks.
#[derive(Parser, Debug)]
#[command(name = "snapkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a framework file: counts, rank and realization residuals.
    Validate { input: String },
    /// Density of the named realizations or of given deformed lengths.
    Energy {
        input: String,
        /// Comma-separated deformed edge lengths in expansion order.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<f64>>,
    },
    /// All admissible critical points of the energy landscape.
    CriticalPoints { input: String },
    /// Global and local snappability.
    Snappability { input: String },
    /// Singularity distance and its relation to snappability.
    SingularityDistance { input: String },
    /// Direct kinematics and singularity distances of a Stewart-Gough platform.
    Sg { input: String },
    /// Everything that applies to the input.
    Report { input: String },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Rel,
    Abs,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Auto,
    Homotopy,
    Multistart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args, Debug)]
struct RunConfig {
    /// Poisson ratio for panels and polyhedra.
    #[arg(long, global = true)]
    nu: Option<f64>,
    #[arg(long, global = true, value_enum, default_value = "both")]
    metric: MetricArg,
    #[arg(long, global = true, value_enum, default_value = "auto")]
    engine: EngineArg,
    /// Largest number of homotopy paths.
    #[arg(long, global = true, default_value_t = 10_000)]
    budget: u64,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Imaginary-part tolerance for real solutions.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol_real: f64,
    /// Density with one simplex per body instead of all of them.
    #[arg(long, global = true)]
    affine: bool,
    #[arg(long, global = true, value_enum, default_value = "json")]
    out: Format,
    /// Write the saddle-to-minimum transition graph in DOT format.
    #[arg(long, global = true)]
    dot: Option<PathBuf>,
}

impl RunConfig {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            engine: match self.engine {
                EngineArg::Auto => Engine::Auto,
                EngineArg::Homotopy => Engine::Homotopy,
                EngineArg::Multistart => Engine::Multistart,
            },
            budget: self.budget,
            seed: self.seed,
            real_tol: self.tol_real,
            density: if self.affine { DensityMode::Affine } else { DensityMode::Full },
            ..Default::default()
        }
    }

    fn metrics(&self) -> Vec<Metric> {
        match self.metric {
            MetricArg::Rel => vec![Metric::Relative],
            MetricArg::Abs => vec![Metric::Absolute],
            MetricArg::Both => vec![Metric::Relative, Metric::Absolute],
        }
    }
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Budget(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Budget(_) => EXIT_BUDGET,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Budget(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<SnapError> for Failure {
    fn from(e: SnapError) -> Self {
        match e {
            SnapError::Model(_) | SnapError::Json(_) => Failure::Validation(e.to_string()),
            SnapError::Solver(SolveError::BudgetExceeded { .. }) => Failure::Budget(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(format!("{e:#}"))
    }
}

enum Input {
    Framework(Box<Framework>),
    Manipulator(Manipulator),
}

fn read_source(input: &str) -> Result<String, Failure> {
    if Path::new(input).is_file() {
        return std::fs::read_to_string(input).map_err(|e| Failure::Validation(format!("{input}: {e}")));
    }
    if matches!(input, "sg" | "stewart_gough") {
        return Ok(fixtures::STEWART_GOUGH.to_string());
    }
    fixtures::source(input)
        .map(str::to_string)
        .ok_or_else(|| Failure::Validation(format!("{input}: no such file or bundled framework")))
}

fn load(input: &str, run: &RunConfig) -> Result<Input, Failure> {
    let text = read_source(input)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("{input}: line {}, column {}: {e}", e.line(), e.column())))?;
    if value.get("legs").is_some() {
        return Ok(Input::Manipulator(Manipulator::from_json(&text)?));
    }
    let mut fw = Framework::from_json(&text)?;
    if let Some(nu) = run.nu {
        fw = fw.with_nu(nu)?;
    }
    Ok(Input::Framework(Box::new(fw)))
}

fn framework(input: &str, run: &RunConfig) -> Result<Framework, Failure> {
    match load(input, run)? {
        Input::Framework(fw) => Ok(*fw),
        Input::Manipulator(_) => Err(Failure::Validation(format!("{input}: expected a framework, found a manipulator"))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_else(|| "inf".into())
}

fn csv_out(header: &[&str], rows: Vec<Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn json_out<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_dot(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct EnergyRow {
    name: String,
    density: f64,
    shaky: bool,
}

fn cmd_validate(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let fw = framework(input, run)?;
    let r = pipeline::validate(&fw, run.seed)?;
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => csv_out(
            &["framework", "dimension", "vertices", "bars", "bodies", "parameters", "edge_classes", "isostatic", "overbraced"],
            vec![vec![
                r.framework,
                r.dimension.to_string(),
                r.vertices.to_string(),
                r.bars.to_string(),
                r.bodies.to_string(),
                r.parameters.to_string(),
                r.edge_classes.to_string(),
                r.isostatic.to_string(),
                r.overbraced.to_string(),
            ]],
        )?,
    })
}

fn cmd_energy(input: &str, lengths: Option<&[f64]>, run: &RunConfig) -> Result<String, Failure> {
    let fw = framework(input, run)?;
    let opts = run.options();
    let ls = pipeline::landscape(&fw, &opts)?;
    let mut rows: Vec<EnergyRow> = fw
        .realizations
        .iter()
        .map(|(name, theta)| EnergyRow {
            name: name.clone(),
            density: ls.value(theta),
            shaky: landscape_shakiness(&ls, theta, SHAKY_TOL).shaky,
        })
        .collect();
    if let Some(l) = lengths {
        let df = DensityFunction::new(&fw, opts.density)?;
        rows.push(EnergyRow {
            name: "lengths".into(),
            density: df.density(l)?,
            shaky: false,
        });
    }
    Ok(match run.out {
        Format::Json => json_out(&rows)?,
        Format::Csv => csv_out(
            &["name", "density", "shaky"],
            rows.iter()
                .map(|r| vec![r.name.clone(), format!("{:.12e}", r.density), r.shaky.to_string()])
                .collect(),
        )?,
    })
}

fn point_rows(points: &[pipeline::PointRow]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                p.name.clone(),
                format!("{:?}", p.kind).to_lowercase(),
                format!("{:.12e}", p.value),
                p.undeformed.to_string(),
                p.shaky.to_string(),
                p.negative_directions.to_string(),
                p.theta.iter().map(|t| format!("{t:.12}")).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect()
}

const POINT_HEADER: [&str; 7] = ["name", "kind", "density", "undeformed", "shaky", "negative_directions", "theta"];

fn cmd_critical(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let fw = framework(input, run)?;
    let opts = run.options();
    let ls = pipeline::landscape(&fw, &opts)?;
    let set = pipeline::critical_set(&fw, &ls, &opts)?;
    if let Some(path) = &run.dot {
        let g = transition_graph(&ls, &set, &FlowOptions::default());
        write_dot(path, &g.to_dot(&set, &pipeline::point_names(&fw, &ls, &set)))?;
    }
    let r = pipeline::critical_report(&fw, &ls, &set);
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => csv_out(&POINT_HEADER, point_rows(&r.points))?,
    })
}

fn analysis(fw: &Framework, run: &RunConfig) -> Result<Analysis, Failure> {
    let a = Analysis::run(fw, &run.options())?;
    if let Some(path) = &run.dot {
        let dot = match &a.graph {
            Some(g) => g.to_dot(&a.set, &a.names),
            None => transition_graph(&a.landscape, &a.set, &FlowOptions::default()).to_dot(&a.set, &a.names),
        };
        write_dot(path, &dot)?;
    }
    Ok(a)
}

fn snap_csv(r: &pipeline::SnapReport) -> anyhow::Result<String> {
    csv_out(
        &["base", "snappability", "saddle", "saddle_shaky", "base_shaky", "e_min", "avg_abs", "avg_rel", "max_abs", "max_rel"],
        r.bases
            .iter()
            .map(|b| {
                let d = b.deformation.clone().unwrap_or_default();
                vec![
                    b.base.clone(),
                    fmt_opt(b.snappability),
                    b.saddle.clone().unwrap_or_default(),
                    b.saddle_shaky.to_string(),
                    b.base_shaky.to_string(),
                    format!("{:.12e}", d.e_min),
                    format!("{:.12e}", d.avg_abs),
                    format!("{:.12e}", d.avg_rel),
                    format!("{:.12e}", d.max_abs),
                    format!("{:.12e}", d.max_rel),
                ]
            })
            .collect(),
    )
}

fn singular_csv(r: &pipeline::SingularReport) -> anyhow::Result<String> {
    csv_out(
        &["base", "singularity_distance", "snappability", "witness", "bound_holds", "equal"],
        r.bases
            .iter()
            .map(|b| {
                vec![
                    b.base.clone(),
                    fmt_opt(b.distance),
                    fmt_opt(b.bound.snap),
                    b.witness.clone().unwrap_or_default(),
                    b.bound.holds.to_string(),
                    b.bound.equal.to_string(),
                ]
            })
            .collect(),
    )
}

fn cmd_snappability(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let fw = framework(input, run)?;
    let a = analysis(&fw, run)?;
    let r = a.snappability(&fw, &run.options())?;
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => snap_csv(&r)?,
    })
}

fn cmd_singular(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let fw = framework(input, run)?;
    let a = analysis(&fw, run)?;
    let r = a.singularity(&fw, &run.options())?;
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => singular_csv(&r)?,
    })
}

fn sg_csv(r: &pipeline::SgReport) -> anyhow::Result<String> {
    let coords = |v: &[f64]| v.iter().map(|t| format!("{t:.12}")).collect::<Vec<_>>().join(" ");
    let mut rows: Vec<Vec<String>> = r
        .poses
        .iter()
        .map(|p| vec!["pose".into(), p.name.clone(), String::new(), String::new(), coords(&p.coordinates)])
        .collect();
    rows.extend(r.distances.iter().map(|d| {
        vec![
            "distance".into(),
            d.base.clone(),
            format!("{:?}", d.metric).to_lowercase(),
            fmt_opt(d.distance),
            d.coordinates.as_deref().map(coords).unwrap_or_default(),
        ]
    }));
    csv_out(&["row", "name", "metric", "value", "coordinates"], rows)
}

fn cmd_sg(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let Input::Manipulator(m) = load(input, run)? else {
        return Err(Failure::Validation(format!("{input}: expected a manipulator")));
    };
    let r = pipeline::sg_report(&m, &run.metrics(), &run.options())?;
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => sg_csv(&r)?,
    })
}

#[derive(Serialize)]
struct FullReport {
    validation: pipeline::ValidationReport,
    snappability: pipeline::SnapReport,
    singularity: pipeline::SingularReport,
}

fn cmd_report(input: &str, run: &RunConfig) -> Result<String, Failure> {
    let fw = match load(input, run)? {
        Input::Manipulator(_) => return cmd_sg(input, run),
        Input::Framework(fw) => *fw,
    };
    let validation = pipeline::validate(&fw, run.seed)?;
    let a = analysis(&fw, run)?;
    let opts = run.options();
    let r = FullReport {
        validation,
        snappability: a.snappability(&fw, &opts)?,
        singularity: a.singularity(&fw, &opts)?,
    };
    Ok(match run.out {
        Format::Json => json_out(&r)?,
        Format::Csv => {
            let mut s = snap_csv(&r.snappability)?;
            s.push('\n');
            s.push_str(&singular_csv(&r.singularity)?);
            s
        }
    })
}

fn execute(cli: &Cli) -> Result<String, Failure> {
    let run = &cli.run;
    if let Some(nu) = run.nu {
        if !(0.0..=0.5).contains(&nu) {
            return Err(ModelError::PoissonRange(nu).into());
        }
    }
    match &cli.command {
        Command::Validate { input } => cmd_validate(input, run),
        Command::Energy { input, lengths } => cmd_energy(input, lengths.as_deref(), run),
        Command::CriticalPoints { input } => cmd_critical(input, run),
        Command::Snappability { input } => cmd_snappability(input, run),
        Command::SingularityDistance { input } => cmd_singular(input, run),
        Command::Sg { input } => cmd_sg(input, run),
        Command::Report { input } => cmd_report(input, run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(text) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(EXIT_INTERNAL);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
