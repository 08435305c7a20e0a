//! Command-line front end. Exit codes: 0 success, 1 task or check failure,
//! 2 input error, 3 infeasible.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::geometry::Pose;
use crate::pipeline::{
    evaluate, run_variant, summarize, validate_demo, FinalGoal, PipelineConfig, PipelineError, TaskSpec,
    TrajectoryRecord, Variant,
};
use crate::plot::{render, View};
use crate::retarget::{build_switch_goals, Demo, RetargetError};
use crate::scene::{load_object, load_scene};
use crate::sim::{read_jsonl, write_jsonl};
use crate::templates::{build_task, find_object, EvalConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const THREADS_ENV: &str = "CONTACT_RETARGET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "contact-retarget", version, about = "Retarget multi-primitive manipulation demos to new scenes")]
pub struct Cli {
    /// Seed for the solver's multistart and for template randomization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Directory for written artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Solver feasibility tolerance in meters.
    #[arg(long, global = true, value_name = "METERS")]
    pub tol: Option<f64>,
    /// Step budget per primitive.
    #[arg(long, global = true, value_name = "N")]
    pub max_steps: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a demo's switch poses in its own scene.
    Validate { demo: PathBuf },
    /// Print the retargeted goal sequence for a task.
    Retarget {
        #[command(flatten)]
        input: TaskInput,
    },
    /// Execute a task and write its trajectory and report.
    Run {
        #[command(flatten)]
        input: TaskInput,
        /// Use the remapped guesses as goals without retargeting.
        #[arg(long)]
        ablate_retarget_x: bool,
    },
    /// Run a batch of randomized template trials.
    Eval {
        /// Batch config; the default covers four templates and both variants.
        config: Option<PathBuf>,
    },
    /// Render a trajectory file to top and side SVG views.
    Plot { trajectory: PathBuf },
    /// Write a randomized task for a bundled template.
    Template {
        name: String,
        #[arg(long, default_value = "cracker")]
        object: String,
    },
}

#[derive(Debug, Args)]
pub struct TaskInput {
    /// Task file holding scene, object, x0, demo and final goal.
    #[arg(long, conflicts_with_all = ["demo", "scene", "object", "x0"])]
    pub task: Option<PathBuf>,
    #[arg(long, requires_all = ["scene", "object", "x0"])]
    pub demo: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Object file, or the name of a bundled object.
    #[arg(long)]
    pub object: Option<String>,
    /// Initial resting pose as "x,y,yaw_deg".
    #[arg(long, value_name = "X,Y,YAW")]
    pub x0: Option<String>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            kind: "input",
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_infeasible() {
            CliError {
                code: EXIT_INFEASIBLE,
                kind: "infeasible",
                message: e.to_string(),
            }
        } else {
            CliError::input(e.to_string())
        }
    }
}

impl From<RetargetError> for CliError {
    fn from(e: RetargetError) -> Self {
        PipelineError::from(e).into()
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&mut self, value: &T, text: &str) {
        let _ = if self.cli.json {
            writeln!(self.stdout, "{}", serde_json::to_string(value).expect("serializable"))
        } else {
            writeln!(self.stdout, "{text}")
        };
    }

    fn pipeline_config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        if let Some(t) = self.cli.tol {
            cfg.solver.tol = t;
        }
        if let Some(s) = self.cli.seed {
            cfg.solver.seed = s;
        }
        if let Some(n) = self.cli.max_steps {
            cfg.max_steps = n;
        }
        cfg
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.cli.out).map_err(|e| CliError::input(format!("{}: {e}", self.cli.out.display())))?;
        Ok(&self.cli.out)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Parse `args` (including the program name) and run the command.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    run(&cli, stdout, stderr)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut ctx = Ctx { cli, stdout };
    let result = match &cli.command {
        Command::Validate { demo } => cmd_validate(&mut ctx, demo),
        Command::Retarget { input } => cmd_retarget(&mut ctx, input),
        Command::Run { input, ablate_retarget_x } => cmd_run(&mut ctx, input, *ablate_retarget_x),
        Command::Eval { config } => cmd_eval(&mut ctx, config.as_deref()),
        Command::Plot { trajectory } => cmd_plot(&mut ctx, trajectory),
        Command::Template { name, object } => cmd_template(&mut ctx, name, object),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                let v = json!({"error": e.kind, "message": e.message, "exit_code": e.code});
                let _ = writeln!(ctx.stdout, "{v}");
            }
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn cmd_validate(ctx: &mut Ctx, path: &Path) -> Result<i32, CliError> {
    let demo = Demo::from_json(&read(path)?).map_err(|e| CliError::input(e.to_string()))?;
    let report = validate_demo(&demo).map_err(|e| CliError::input(e.to_string()))?;
    let mut text = String::new();
    for s in &report.switches {
        text.push_str(&format!(
            "switch {} (keyframe {}): {} freestanding={} residual={:.6}{}\n",
            s.index,
            s.keyframe,
            if s.passed { "PASS" } else { "FAIL" },
            s.freestanding,
            s.residual,
            s.violated.as_ref().map(|c| format!(" violated={c}")).unwrap_or_default()
        ));
    }
    text.push_str(if report.passed { "demo valid" } else { "demo invalid" });
    ctx.emit(&report, &text);
    Ok(if report.passed { EXIT_OK } else { EXIT_FAILED })
}

fn parse_x0(s: &str) -> Result<[f64; 3], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::input(format!("bad --x0 '{s}', expected x,y,yaw_deg")))?;
    match v[..] {
        [x, y, yaw] => Ok([x, y, yaw]),
        _ => Err(CliError::input(format!("bad --x0 '{s}', expected x,y,yaw_deg"))),
    }
}

fn load_task(input: &TaskInput) -> Result<TaskSpec, CliError> {
    if let Some(p) = &input.task {
        return TaskSpec::from_json(&read(p)?).map_err(|e| CliError::input(e.to_string()));
    }
    let (Some(demo), Some(scene), Some(object), Some(x0)) = (&input.demo, &input.scene, &input.object, &input.x0) else {
        return Err(CliError::input("either --task or all of --demo, --scene, --object, --x0 are required"));
    };
    let demo = Demo::from_json(&read(demo)?).map_err(|e| CliError::input(e.to_string()))?;
    let name = input
        .demo
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let scene = load_scene(scene).map_err(|e| CliError::input(e.to_string()))?;
    let object = if Path::new(object).exists() {
        load_object(object).map_err(|e| CliError::input(e.to_string()))?
    } else {
        find_object(object).ok_or_else(|| CliError::input(format!("unknown object '{object}'")))?
    };
    let [x, y, yaw] = parse_x0(x0)?;
    let x0: Pose = object.resting_pose(x, y, yaw.to_radians());
    Ok(TaskSpec {
        name,
        scene,
        object,
        x0,
        demo,
        final_goal: FinalGoal::Remapped,
    })
}

fn cmd_retarget(ctx: &mut Ctx, input: &TaskInput) -> Result<i32, CliError> {
    let task = load_task(input)?;
    crate::pipeline::check_task(&task)?;
    let cfg = ctx.pipeline_config();
    let switch = build_switch_goals(&task.demo, &task.scene, &task.object, &task.x0, &cfg.solver)?;
    let seq = crate::pipeline::goal_sequence(&task, switch);
    let mut text = String::new();
    for (i, g) in seq.goals.iter().enumerate() {
        let p = g.center.position;
        text.push_str(&format!(
            "goal {} ({}): position ({:.4}, {:.4}, {:.4}) env {:?}\n",
            i + 1,
            task.demo.labels[i],
            p.x,
            p.y,
            p.z,
            g.require_env
        ));
    }
    ctx.emit(&seq, text.trim_end());
    Ok(EXIT_OK)
}

fn cmd_run(ctx: &mut Ctx, input: &TaskInput, ablate: bool) -> Result<i32, CliError> {
    let task = load_task(input)?;
    let cfg = ctx.pipeline_config();
    let variant = if ablate { Variant::Ablated } else { Variant::Retargeted };
    let out = run_variant(&task, variant, &cfg)?;
    let dir = ctx.out_dir()?.to_path_buf();
    let mut buf = Vec::new();
    write_jsonl(&out.records(), &mut buf).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(dir.join("trajectory.jsonl"), buf).map_err(|e| CliError::input(e.to_string()))?;
    let report = &out.report;
    write(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    let mut text = format!("task '{}' ({}): ", report.task, report.variant);
    match &report.failure_reason {
        None => text.push_str("success"),
        Some(r) => text.push_str(&format!("failure: {r}")),
    }
    for p in &report.primitives {
        text.push_str(&format!("\n  {} {} steps, {:?}", p.kind, p.steps, p.outcome));
    }
    ctx.emit(report, &text);
    Ok(if report.success { EXIT_OK } else { EXIT_FAILED })
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::input(format!("{THREADS_ENV} must be a positive integer")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| CliError::input(e.to_string()))
}

fn cmd_eval(ctx: &mut Ctx, path: Option<&Path>) -> Result<i32, CliError> {
    let mut config = match path {
        Some(p) => serde_json::from_str::<EvalConfig>(&read(p)?).map_err(|e| CliError::input(format!("bad eval config: {e}")))?,
        None => EvalConfig::default(),
    };
    if let Some(s) = ctx.cli.seed {
        config.seed = s;
    }
    let cfg = ctx.pipeline_config();
    let rows = if config.variants.is_empty() {
        vec![]
    } else {
        let trials = config.trials().map_err(CliError::input)?;
        thread_pool()?.install(|| evaluate(&trials, &config.variants, &cfg))
    };
    let dir = ctx.out_dir()?.to_path_buf();
    let csv_path = dir.join("eval.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::input(e.to_string()))?;
    if rows.is_empty() {
        w.write_record(["task", "variant", "object", "seed", "success", "failure_reason", "solve_ms", "steps"])
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::input(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::input(e.to_string()))?;
    let summary = summarize(&rows);
    let text: Vec<String> = summary
        .iter()
        .map(|l| {
            format!(
                "{} {}: {}/{} ({:.1}%), mean solve {:.1} ms",
                l.task,
                l.variant,
                l.successes,
                l.trials,
                100.0 * l.rate(),
                l.mean_solve_ms
            )
        })
        .collect();
    ctx.emit(
        &json!({"rows": rows.len(), "csv": csv_path, "summary": summary}),
        &text.join("\n"),
    );
    Ok(EXIT_OK)
}

fn cmd_plot(ctx: &mut Ctx, path: &Path) -> Result<i32, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let records: Vec<TrajectoryRecord> = read_jsonl(BufReader::new(f)).map_err(CliError::input)?;
    let dir = ctx.out_dir()?.to_path_buf();
    let mut files = Vec::new();
    for view in [View::Top, View::Side] {
        let p = dir.join(view.file_name());
        write(&p, &render(&records, view))?;
        files.push(p);
    }
    let text = files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n");
    ctx.emit(&json!({ "files": files }), &text);
    Ok(EXIT_OK)
}

fn cmd_template(ctx: &mut Ctx, name: &str, object: &str) -> Result<i32, CliError> {
    let obj = find_object(object).ok_or_else(|| CliError::input(format!("unknown object '{object}'")))?;
    let task = build_task(name, &obj, ctx.cli.seed.unwrap_or(0))
        .ok_or_else(|| CliError::input(format!("unknown template '{name}'")))?;
    let _ = writeln!(ctx.stdout, "{}", serde_json::to_string_pretty(&task).expect("task serializes"));
    Ok(EXIT_OK)
}
