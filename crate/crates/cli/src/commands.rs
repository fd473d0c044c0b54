use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use panelguide_core::analytics::{
    score_logs, wilcoxon_signed_rank, wilcoxon_signed_rank_with, MethodChoice, PairedSamples,
};
use panelguide_core::fixtures::FixtureSet;
use panelguide_core::ingest::{
    ingest_file, ingest_image, HttpOcrClient, ImageBlob, InstructionDocument, OcrClient, OcrConfig,
};
use panelguide_core::llm::{CompletionBackend, LiveBackend, ScriptedBackend};
use panelguide_core::parser::{parse_reply, render_sequence};
use panelguide_core::pipeline::Compiler;
use panelguide_core::prompt::Templates;
use panelguide_core::session::ManualClock;
use panelguide_core::{CommandSequence, Execution, PanelSchema, ParseMode};
use panelguide_server::sim::{run_paired_experiment, Condition, OperatorProfile, Target};
use panelguide_server::{serve as start_server, BackgroundServer, ServerConfig, DEFAULT_PORT};

use crate::config::{
    AnalyzeCommand, BackendChoice, CompileArgs, FileConfig, MethodArg, ModeChoice, ScoreArgs,
    ServeArgs, Settings, SimulateArgs, WilcoxonArgs,
};
use crate::CliError;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif", "tif", "tiff", "webp", "pdf"];

fn load_schema(settings: &Settings) -> Result<PanelSchema, CliError> {
    let Some(path) = &settings.schema else {
        return Ok(PanelSchema::default_panel());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::stage("schema", format!("cannot read {}: {e}", path.display())))?;
    PanelSchema::from_json(&text).map_err(|e| CliError::stage("schema", e))
}

fn load_fixtures(dir: Option<&Path>) -> Result<FixtureSet, CliError> {
    match dir {
        Some(dir) => FixtureSet::from_dir(dir).map_err(|e| CliError::stage("fixtures", e)),
        None => Ok(FixtureSet::bundled()),
    }
}

fn parse_mode(mode: ModeChoice) -> ParseMode {
    match mode {
        ModeChoice::Strict => ParseMode::Strict,
        ModeChoice::Lenient => ParseMode::Lenient,
    }
}

fn backend(
    choice: BackendChoice,
    fixtures: &FixtureSet,
) -> Result<Arc<dyn CompletionBackend>, CliError> {
    match choice {
        BackendChoice::Scripted => Ok(Arc::new(ScriptedBackend::from_fixtures(fixtures))),
        BackendChoice::Live => LiveBackend::from_env()
            .map(|b| Arc::new(b) as Arc<dyn CompletionBackend>)
            .ok_or_else(|| CliError::stage("llm", "LLM_BASE_URL and LLM_API_KEY must be set")),
    }
}

fn ocr_client(choice: BackendChoice, fixtures: &FixtureSet) -> Result<Arc<dyn OcrClient>, CliError> {
    match choice {
        BackendChoice::Scripted => Ok(Arc::new(fixtures.scripted_ocr())),
        BackendChoice::Live => OcrConfig::from_env()
            .map(|c| Arc::new(HttpOcrClient::new(c)) as Arc<dyn OcrClient>)
            .ok_or_else(|| CliError::stage("ingest", "OCR_ENDPOINT must be set for image input")),
    }
}

fn compiler(settings: &Settings, fixtures: &FixtureSet) -> Result<Compiler, CliError> {
    let schema = Arc::new(load_schema(settings)?);
    let mut compiler =
        Compiler::new(schema, backend(settings.backend, fixtures)?).with_mode(parse_mode(settings.mode));
    if let Some(dir) = &settings.templates {
        let templates = Templates::load_dir(dir).map_err(|e| CliError::stage("prompt", e))?;
        compiler = compiler.with_templates(templates);
    }
    Ok(compiler)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::stage("report", format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::stage("report", format!("{}: {e}", path.display())))
}

pub fn compile(settings: &Settings, args: &CompileArgs) -> Result<(), CliError> {
    let fixtures = load_fixtures(settings.fixtures.as_deref())?;
    let compiler = compiler(settings, &fixtures)?;

    let doc: InstructionDocument = if is_image(&args.input) {
        let ocr = ocr_client(settings.backend, &fixtures)?;
        let image = ImageBlob::from_file(&args.input).map_err(|e| CliError::stage("ingest", e))?;
        ingest_image(&image, ocr.as_ref(), 0).map_err(|e| CliError::stage("ingest", e))?
    } else {
        ingest_file(&args.input).map_err(|e| CliError::stage("ingest", e))?
    };
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| settings.log_dir.join(format!("{}.report.json", doc.id)));

    let (bundle, completion) = compiler
        .request(&doc)
        .map_err(|e| CliError::stage(e.stage().as_str(), e))?;
    let mut report = json!({
        "doc_id": doc.id,
        "word_count": doc.word_count,
        "prompt_words": bundle.total_words,
        "template_version": compiler.templates.version,
        "backend": format!("{:?}", completion.backend).to_lowercase(),
        "latency_ms": completion.latency.as_millis() as u64,
        "raw_reply": completion.text,
    });
    match compiler.parse(&doc, &completion.text) {
        Ok((seq, parse_report)) => {
            report["sequence"] = json!(render_sequence(&seq));
            report["parse"] = json!(parse_report);
            write_json(&report_path, &report)?;
            println!("{seq}");
            Ok(())
        }
        Err(e) => {
            report["error"] = json!(e.to_string());
            write_json(&report_path, &report)?;
            eprintln!("report: {}", report_path.display());
            Err(CliError::stage("parse", e.to_string().trim_start_matches("parse: ")))
        }
    }
}

pub fn serve(settings: &Settings, file: &FileConfig, args: &ServeArgs) -> Result<(), CliError> {
    let fixtures = load_fixtures(settings.fixtures.as_deref())?;
    let mut config = ServerConfig::with_fixtures(fixtures.clone(), &settings.log_dir);
    config.compiler = compiler(settings, &fixtures)?;
    config.ocr = ocr_client(settings.backend, &fixtures)?;
    config.host = args
        .host
        .or(file.host)
        .unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST));
    config.port = args.port.or(file.port).unwrap_or(DEFAULT_PORT);
    config.min_ocr_words = args.min_ocr_words.or(file.min_ocr_words).unwrap_or(0);

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::stage("serve", format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let handle = start_server(config)
            .await
            .map_err(|e| CliError::stage("serve", e))?;
        println!(
            "{}",
            json!({"tcp": handle.tcp_addr().to_string(), "ws": handle.ws_addr().to_string()})
        );
        if let Err(e) = tokio::signal::ctrl_c().await {
            tracing::warn!("cannot listen for ctrl-c: {e}");
        }
        handle.shutdown().await;
        Ok(())
    })
}

fn canonical_sequence(
    fixtures: &FixtureSet,
    schema: &PanelSchema,
    id: &str,
) -> Result<CommandSequence, CliError> {
    let reply = fixtures
        .reply(id)
        .ok_or_else(|| CliError::stage("fixtures", format!("no reply fixture named {id:?}")))?;
    parse_reply(reply, schema, ParseMode::Strict, id)
        .map(|(seq, _)| seq)
        .map_err(|e| CliError::stage("fixtures", format!("{id}: {e}")))
}

fn load_profile(path: &Path) -> Result<OperatorProfile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::stage("profile", format!("{}: {e}", path.display())))?;
    let profile: OperatorProfile = serde_json::from_str(&text)
        .map_err(|e| CliError::stage("profile", format!("{}: {e}", path.display())))?;
    profile
        .validate()
        .map_err(|e| CliError::stage("profile", format!("{}: {e}", path.display())))?;
    Ok(profile)
}

/// Returns element `i`, repeating the only element when there is one.
fn pick<T: Clone>(values: &[T], i: usize, what: &str) -> Result<T, CliError> {
    match values.len() {
        1 => Ok(values[0].clone()),
        2 => Ok(values[i].clone()),
        n => Err(CliError::usage(format!("expected one or two --{what} values, got {n}"))),
    }
}

pub fn simulate(settings: &Settings, args: &SimulateArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let fixtures = load_fixtures(settings.fixtures.as_deref())?;
    let schema = load_schema(settings)?;

    let mut conditions = Vec::with_capacity(2);
    for i in 0..2 {
        let profile_path = pick(&args.profile, i, "profile")?;
        let fixture = pick(&args.fixture, i, "fixture")?;
        let label = if args.label.is_empty() {
            let stem = profile_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "condition".into());
            if args.profile.len() == 1 {
                format!("{stem}-{}", ["a", "b"][i])
            } else {
                stem
            }
        } else {
            pick(&args.label, i, "label")?
        };
        conditions.push(Condition {
            label,
            correct: canonical_sequence(&fixtures, &schema, &fixture)?,
            fixture,
            profile: load_profile(&profile_path)?,
        });
    }
    if conditions[0].label == conditions[1].label {
        return Err(CliError::usage("the two conditions need distinct labels"));
    }

    std::fs::create_dir_all(&settings.log_dir)
        .map_err(|e| CliError::stage("simulate", format!("{}: {e}", settings.log_dir.display())))?;
    let clock = ManualClock::new(0);
    let _server;
    let target = match args.connect {
        Some(addr) => Target::new(addr, &settings.log_dir),
        None => {
            let mut config = ServerConfig::with_fixtures(fixtures.clone(), &settings.log_dir).port(0);
            config.compiler = compiler(settings, &fixtures)?;
            if !args.real_time {
                config.clock = Arc::new(clock.clone());
            }
            let server = BackgroundServer::start(config).map_err(|e| CliError::stage("serve", e))?;
            let target = Target::new(server.tcp_addr(), &settings.log_dir);
            _server = server;
            if args.real_time {
                target
            } else {
                target.virtual_clock(clock)
            }
        }
    };
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let exp = run_paired_experiment(
        [&conditions[0], &conditions[1]],
        args.n,
        args.seed,
        &target,
        exec,
    )
    .map_err(|e| CliError::stage("simulate", e))?;

    let stem = format!("{}-vs-{}", conditions[0].label, conditions[1].label);
    let time_csv = settings.log_dir.join(format!("{stem}.time.csv"));
    let accuracy_csv = settings.log_dir.join(format!("{stem}.accuracy.csv"));
    for (path, samples) in [(&time_csv, &exp.time), (&accuracy_csv, &exp.accuracy)] {
        std::fs::write(path, samples.to_csv())
            .map_err(|e| CliError::stage("simulate", format!("{}: {e}", path.display())))?;
    }
    let time_test = wilcoxon_signed_rank(&exp.time).map_err(|e| CliError::stage("analyze", e))?;
    let accuracy_test =
        wilcoxon_signed_rank(&exp.accuracy).map_err(|e| CliError::stage("analyze", e))?;
    println!(
        "{}",
        json!({
            "subjects": args.n,
            "time_csv": time_csv,
            "accuracy_csv": accuracy_csv,
            "time_wilcoxon": time_test,
            "accuracy_wilcoxon": accuracy_test,
        })
    );
    Ok(())
}

pub fn analyze(settings: &Settings, command: &AnalyzeCommand) -> Result<(), CliError> {
    match command {
        AnalyzeCommand::Score(args) => score(settings, args),
        AnalyzeCommand::Wilcoxon(args) => wilcoxon(args),
    }
}

fn score(settings: &Settings, args: &ScoreArgs) -> Result<(), CliError> {
    let schema = load_schema(settings)?;
    let correct = match (&args.fixture, &args.correct) {
        (_, Some(text)) => parse_reply(text, &schema, ParseMode::Strict, "correct")
            .map(|(seq, _)| seq)
            .map_err(|e| CliError::stage("parse", e))?,
        (Some(id), None) => {
            let fixtures = load_fixtures(args.fixtures.as_deref().or(settings.fixtures.as_deref()))?;
            canonical_sequence(&fixtures, &schema, id)?
        }
        (None, None) => return Err(CliError::usage("give --fixture or --correct")),
    };
    let texts = args
        .logs
        .iter()
        .map(|p| {
            std::fs::read_to_string(p)
                .map_err(|e| CliError::stage("score", format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reports = score_logs(&texts, &correct, Execution::default());
    for (path, report) in args.logs.iter().zip(reports) {
        let report =
            report.map_err(|e| CliError::stage("score", format!("{}: {e}", path.display())))?;
        let mut value = json!(report);
        value["log"] = json!(path);
        println!("{value}");
    }
    Ok(())
}

fn wilcoxon(args: &WilcoxonArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.csv)
        .map_err(|e| CliError::stage("analyze", format!("{}: {e}", args.csv.display())))?;
    let samples = PairedSamples::from_csv(file).map_err(|e| CliError::stage("analyze", e))?;
    let choice = match args.method {
        MethodArg::Auto => MethodChoice::Auto,
        MethodArg::Exact => MethodChoice::Exact,
        MethodArg::Normal => MethodChoice::Normal,
    };
    let result = wilcoxon_signed_rank_with(&samples, choice).map_err(|e| CliError::stage("analyze", e))?;
    let mut value = json!(result);
    value["label_a"] = json!(samples.label_a);
    value["label_b"] = json!(samples.label_b);
    value["n_pairs"] = json!(samples.pairs.len());
    println!("{value}");
    Ok(())
}

pub fn schema_check(settings: &Settings) -> Result<(), CliError> {
    let schema = load_schema(settings)?;
    println!("{}", schema.census());
    Ok(())
}
