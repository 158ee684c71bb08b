//! Per-step records, CSV round-trip, SVG plots and the run summary.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::World;
use crate::error::{Error, Result};
use crate::learner::StepSink;
use crate::state::{ActionId, WorldState, MUSCULAR, SLEEP};

pub const CSV_VERSION_LINE: &str = "# ctcs-hrrl v1";

pub const CSV_COLUMNS: [&str; 14] = [
    "step", "clock", "level1", "level2", "f_m", "f_s", "drive", "reward", "loss_f", "loss_j", "action", "explored",
    "pos_x", "pos_y",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub clock: f64,
    pub level1: f64,
    pub level2: f64,
    pub f_m: f64,
    pub f_s: f64,
    pub drive: f64,
    pub reward: f64,
    pub loss_f: f64,
    pub loss_j: f64,
    pub action: ActionId,
    pub explored: bool,
    pub pos_x: f64,
    pub pos_y: f64,
}

impl StepRecord {
    fn fields(&self) -> [String; 14] {
        [
            self.step.to_string(),
            format_sig9(self.clock),
            format_sig9(self.level1),
            format_sig9(self.level2),
            format_sig9(self.f_m),
            format_sig9(self.f_s),
            format_sig9(self.drive),
            format_sig9(self.reward),
            format_sig9(self.loss_f),
            format_sig9(self.loss_j),
            self.action.name().to_string(),
            u8::from(self.explored).to_string(),
            format_sig9(self.pos_x),
            format_sig9(self.pos_y),
        ]
    }

    /// The record as it reads back from CSV.
    pub fn rounded(&self) -> StepRecord {
        let r = |x: f64| round_sig9(x);
        StepRecord {
            clock: r(self.clock),
            level1: r(self.level1),
            level2: r(self.level2),
            f_m: r(self.f_m),
            f_s: r(self.f_s),
            drive: r(self.drive),
            reward: r(self.reward),
            loss_f: r(self.loss_f),
            loss_j: r(self.loss_j),
            pos_x: r(self.pos_x),
            pos_y: r(self.pos_y),
            ..*self
        }
    }
}

fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Nine significant digits, printed in the shortest form that reads back to
/// the rounded value.
pub fn format_sig9(x: f64) -> String {
    let r = round_sig9(x);
    if r == 0.0 {
        return "0".into();
    }
    let plain = r.to_string();
    let sci = format!("{r:e}");
    if sci.len() < plain.len() {
        sci
    } else {
        plain
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
}

impl RunMeta {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        RunMeta { seed, config_hash: config_hash.into(), code_version: env!("CARGO_PKG_VERSION").to_string() }
    }

    fn comment_line(&self) -> String {
        format!("# seed={} config_hash={} code_version={}", self.seed, self.config_hash, self.code_version)
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let mut seed = None;
        let mut hash = None;
        let mut version = None;
        for kv in line.strip_prefix("# ")?.split_whitespace() {
            let (k, v) = kv.split_once('=')?;
            match k {
                "seed" => seed = v.parse().ok(),
                "config_hash" => hash = Some(v.to_string()),
                "code_version" => version = Some(v.to_string()),
                _ => return None,
            }
        }
        Some(RunMeta { seed: seed?, config_hash: hash?, code_version: version? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub meta: RunMeta,
    pub records: Vec<StepRecord>,
    first_step: u64,
}

impl EpisodeLog {
    pub fn new(meta: RunMeta) -> Self {
        Self::starting_at(meta, 1)
    }

    /// A log whose first record must carry step index `first_step`.
    pub fn starting_at(meta: RunMeta, first_step: u64) -> Self {
        EpisodeLog { meta, records: Vec::new(), first_step }
    }

    pub fn next_step(&self) -> u64 {
        self.records.last().map_or(self.first_step, |r| r.step + 1)
    }

    pub fn record(&mut self, record: StepRecord) -> Result<()> {
        let expected = self.next_step();
        if record.step != expected {
            return Err(Error::contract(format!("step {} recorded where {} was expected", record.step, expected)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        let mut w = CsvSink::new(&mut buf, &self.meta).expect("in-memory write");
        for r in &self.records {
            w.on_step(r).expect("in-memory write");
        }
        w.finish().expect("in-memory write");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

/// Streams rows as they are produced; used both by the run loop and by [`emit_csv`].
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut inner: W, meta: &RunMeta) -> io::Result<Self> {
        writeln!(inner, "{CSV_VERSION_LINE}")?;
        writeln!(inner, "{}", meta.comment_line())?;
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(inner);
        writer.write_record(CSV_COLUMNS)?;
        Ok(CsvSink { writer })
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path, meta: &RunMeta) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        CsvSink::new(BufWriter::new(file), meta).map_err(|e| Error::io(path, e))
    }
}

impl<W: Write> StepSink for CsvSink<W> {
    fn on_step(&mut self, record: &StepRecord) -> io::Result<()> {
        self.writer.write_record(record.fields())?;
        Ok(())
    }
}

pub fn emit_csv(log: &EpisodeLog, path: &Path) -> Result<()> {
    let mut sink = CsvSink::create(path, &log.meta)?;
    for r in &log.records {
        sink.on_step(r).map_err(|e| Error::io(path, e))?;
    }
    sink.finish().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = row.get(i).ok_or_else(|| Error::Telemetry(format!("line {line}: missing column {}", CSV_COLUMNS[i])))?;
    raw.parse().map_err(|_| Error::Telemetry(format!("line {line}: bad {} value {raw:?}", CSV_COLUMNS[i])))
}

pub fn parse_csv<R: io::Read>(reader: R) -> Result<EpisodeLog> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    let mut header_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::Telemetry(e.to_string()))?;
        Ok(line.trim_end_matches('\n').to_string())
    };
    if header_line(&mut reader)? != CSV_VERSION_LINE {
        return Err(Error::Telemetry("missing version line".into()));
    }
    let meta_line = header_line(&mut reader)?;
    let meta = RunMeta::parse_comment(&meta_line).ok_or_else(|| Error::Telemetry("malformed metadata line".into()))?;

    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let header = csv.headers().map_err(|e| Error::Telemetry(e.to_string()))?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Telemetry("unexpected column header".into()));
    }
    let mut log: Option<EpisodeLog> = None;
    for row in csv.records() {
        let row = row.map_err(|e| Error::Telemetry(e.to_string()))?;
        let n = row.position().map_or(0, |p| p.line() + 2);
        let explored: u8 = parse_field(&row, 11, n)?;
        let record = StepRecord {
            step: parse_field(&row, 0, n)?,
            clock: parse_field(&row, 1, n)?,
            level1: parse_field(&row, 2, n)?,
            level2: parse_field(&row, 3, n)?,
            f_m: parse_field(&row, 4, n)?,
            f_s: parse_field(&row, 5, n)?,
            drive: parse_field(&row, 6, n)?,
            reward: parse_field(&row, 7, n)?,
            loss_f: parse_field(&row, 8, n)?,
            loss_j: parse_field(&row, 9, n)?,
            action: parse_field(&row, 10, n)?,
            explored: match explored {
                0 => false,
                1 => true,
                _ => return Err(Error::Telemetry(format!("line {n}: explored must be 0 or 1"))),
            },
            pos_x: parse_field(&row, 12, n)?,
            pos_y: parse_field(&row, 13, n)?,
        };
        let log = log.get_or_insert_with(|| EpisodeLog::starting_at(meta.clone(), record.step));
        log.record(record)?;
    }
    Ok(log.unwrap_or_else(|| EpisodeLog::new(meta)))
}

pub fn read_csv(path: &Path) -> Result<EpisodeLog> {
    parse_csv(File::open(path).map_err(|e| Error::io(path, e))?)
}

/// Records `[floor(n*from), floor(n*to))`.
pub fn window(records: &[StepRecord], from: f64, to: f64) -> &[StepRecord] {
    let n = records.len() as f64;
    let a = (n * from).floor() as usize;
    let b = ((n * to).floor() as usize).min(records.len());
    &records[a.min(b)..b]
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    /// Locomotion chosen while muscular fatigue exceeded its cap.
    pub walk_while_fatigued: u64,
    /// Any action other than sleep chosen at or above the forced-sleep level.
    pub awake_while_exhausted: u64,
    /// Completed sleep bouts shorter than the minimum duration.
    pub short_sleep_bouts: u64,
    pub out_of_bounds: u64,
}

impl ConstraintAudit {
    pub fn total(&self) -> u64 {
        self.walk_while_fatigued + self.awake_while_exhausted + self.short_sleep_bouts + self.out_of_bounds
    }
}

/// Checks every record against the pre-step state it was chosen in.
pub fn audit_constraints(log: &EpisodeLog, initial: &WorldState, world: &World) -> ConstraintAudit {
    let th = &world.thresholds;
    let sp = &world.body.setpoint;
    let mut audit = ConstraintAudit::default();
    let (mut f_m, mut f_s) = (initial.level(MUSCULAR, sp), initial.level(SLEEP, sp));
    if !world.arena.contains(initial.position) {
        audit.out_of_bounds += 1;
    }
    let mut bout = if initial.is_sleeping() { u64::from(th.sleep_min_steps.saturating_sub(initial.sleep_steps_remaining)) } else { 0 };
    for r in &log.records {
        if r.action.is_locomotion() && f_m > th.walk_fatigue_max {
            audit.walk_while_fatigued += 1;
        }
        if r.action != ActionId::Sleep && f_s >= th.sleep_forced_min {
            audit.awake_while_exhausted += 1;
        }
        if r.action == ActionId::Sleep {
            bout += 1;
        } else {
            if bout > 0 && bout < u64::from(th.sleep_min_steps) {
                audit.short_sleep_bouts += 1;
            }
            bout = 0;
        }
        if !world.arena.contains([r.pos_x, r.pos_y]) {
            audit.out_of_bounds += 1;
        }
        (f_m, f_s) = (r.f_m, r.f_s);
    }
    audit
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub iterations: u64,
    pub initial_mean_drive: f64,
    pub final_mean_drive: f64,
    pub explored_fraction: f64,
    pub constraint_violations: u64,
    pub final_level1_mean: f64,
    pub final_level2_mean: f64,
    pub clipped_updates: u64,
}

/// Fraction of the log used for the opening and closing windows.
pub const SUMMARY_WINDOW: f64 = 0.1;

impl RunSummary {
    pub fn new(log: &EpisodeLog, audit: &ConstraintAudit, clipped_updates: u64) -> Self {
        let head = window(&log.records, 0.0, SUMMARY_WINDOW);
        let tail = window(&log.records, 1.0 - SUMMARY_WINDOW, 1.0);
        let explored = log.records.iter().filter(|r| r.explored).count();
        RunSummary {
            seed: log.meta.seed,
            iterations: log.len() as u64,
            initial_mean_drive: mean(head.iter().map(|r| r.drive)),
            final_mean_drive: mean(tail.iter().map(|r| r.drive)),
            explored_fraction: if log.is_empty() { 0.0 } else { explored as f64 / log.len() as f64 },
            constraint_violations: audit.total(),
            final_level1_mean: mean(tail.iter().map(|r| r.level1)),
            final_level2_mean: mean(tail.iter().map(|r| r.level2)),
            clipped_updates,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

struct HLine<'a> {
    y: f64,
    color: &'a str,
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { 0.1 * lo.abs() } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        let _ = writeln!(out, r#"<text x="{l}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, format_sig9(self.x.0));
        let _ = writeln!(out, r#"<text x="{r}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, format_sig9(self.x.1));
        let _ = writeln!(out, r#"<text x="{}" y="{b}" text-anchor="end">{:.3}</text>"#, l - 4.0, self.y.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, l - 4.0, t + 8.0, self.y.1);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
        let _ = writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0
        );
    }

    fn series(&self, out: &mut String, s: &Series) {
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, self.px(x), self.py(y), s.color);
            return;
        }
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#, s.color, pts.join(" "));
    }
}

fn legend(out: &mut String, series: &[Series]) {
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        let x = WIDTH - MARGIN - 90.0;
        let _ = writeln!(out, r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>"#, y - 4.0, x + 16.0, y - 4.0, s.color);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, s.label);
    }
}

fn line_chart(title: &str, y_label: &str, series: &[Series], hlines: &[HLine]) -> String {
    let (x0, x1) = min_max(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = min_max(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(hlines.iter().map(|h| h.y)));
    let frame = Frame { x: padded_range(x0, x1), y: padded_range(y0, y1) };
    let mut out = String::new();
    svg_open(&mut out, title);
    frame.axes(&mut out, "step", y_label);
    for h in hlines {
        let y = frame.py(h.y);
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{}" stroke-dasharray="6,4"/>"#,
            WIDTH - MARGIN,
            h.color
        );
    }
    for s in series {
        frame.series(&mut out, s);
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

fn strided(log: &EpisodeLog, stride: usize) -> impl Iterator<Item = &StepRecord> {
    let n = log.records.len();
    // Keep the last record so the curve ends where the run ended.
    log.records.iter().enumerate().filter(move |(i, _)| i % stride == 0 || *i + 1 == n).map(|(_, r)| r)
}

pub fn render_resources(log: &EpisodeLog, world: &World, stride: usize) -> String {
    let sp = world.body.setpoint.values();
    let s1 = Series { label: "resource 1", color: "black", points: strided(log, stride).map(|r| (r.step as f64, r.level1)).collect() };
    let s2 = Series { label: "resource 2", color: "red", points: strided(log, stride).map(|r| (r.step as f64, r.level2)).collect() };
    line_chart("Resource levels", "level", &[s1, s2], &[HLine { y: sp[0], color: "black" }, HLine { y: sp[1], color: "red" }])
}

pub fn render_fatigue(log: &EpisodeLog, stride: usize) -> String {
    let m = Series { label: "muscular", color: "blue", points: strided(log, stride).map(|r| (r.step as f64, r.f_m)).collect() };
    let s = Series { label: "sleep", color: "green", points: strided(log, stride).map(|r| (r.step as f64, r.f_s)).collect() };
    line_chart("Fatigue", "level", &[m, s], &[])
}

pub fn render_loss_j(log: &EpisodeLog, stride: usize) -> String {
    let points = strided(log, stride).map(|r| (r.step as f64, r.loss_j.max(1e-300).log10())).collect();
    line_chart("Loss of the deviation function", "log10 L_J", &[Series { label: "L_J", color: "purple", points }], &[])
}

pub fn render_track(log: &EpisodeLog, world: &World, stride: usize) -> String {
    let side = world.arena.side;
    let frame = Frame { x: (0.0, side), y: (0.0, side) };
    let mut out = String::new();
    svg_open(&mut out, "Agent track");
    frame.axes(&mut out, "x", "y");
    for (site, color) in world.arena.resources.iter().zip(["black", "red"]) {
        let rx = site.radius / side * (WIDTH - 2.0 * MARGIN);
        let ry = site.radius / side * (HEIGHT - 2.0 * MARGIN);
        let _ = writeln!(
            out,
            r#"<ellipse cx="{:.2}" cy="{:.2}" rx="{rx:.2}" ry="{ry:.2}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            frame.px(site.center[0]),
            frame.py(site.center[1])
        );
    }
    let track = Series { label: "track", color: "steelblue", points: strided(log, stride).map(|r| (r.pos_x, r.pos_y)).collect() };
    frame.series(&mut out, &track);
    out.push_str("</svg>\n");
    out
}

pub const PLOT_FILES: [&str; 4] = ["resources.svg", "fatigue.svg", "loss_j.svg", "track.svg"];

pub fn emit_plots(log: &EpisodeLog, world: &World, dir: &Path, stride: usize) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(Error::contract("cannot plot an empty log"));
    }
    let stride = stride.max(1);
    let docs = [
        render_resources(log, world, stride),
        render_fatigue(log, stride),
        render_loss_j(log, stride),
        render_track(log, world, stride),
    ];
    let mut paths = Vec::with_capacity(docs.len());
    for (name, doc) in PLOT_FILES.iter().zip(docs) {
        let path = dir.join(name);
        std::fs::write(&path, doc).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Resource, SetPoint};
    use proptest::prelude::*;

    fn rec(step: u64) -> StepRecord {
        StepRecord {
            step,
            clock: step as f64 * 0.01,
            level1: 0.1,
            level2: 0.1,
            f_m: 0.1,
            f_s: 0.1,
            drive: 2.0,
            reward: 0.0,
            loss_f: 1e-3,
            loss_j: 0.5,
            action: ActionId::Idle,
            explored: false,
            pos_x: 0.5,
            pos_y: 0.5,
        }
    }

    fn meta() -> RunMeta {
        RunMeta::new(7, "abc")
    }

    #[test]
    fn record_enforces_ordering() {
        let mut log = EpisodeLog::new(meta());
        log.record(rec(1)).unwrap();
        assert_eq!(log.len(), 1);
        log.record(rec(2)).unwrap();
        log.record(rec(3)).unwrap();
        assert!(log.record(rec(5)).is_err());
        assert!(EpisodeLog::new(meta()).record(rec(2)).is_err());
    }

    #[test]
    fn many_appends() {
        let mut log = EpisodeLog::new(meta());
        for k in 1..=14000 {
            log.record(rec(k)).unwrap();
        }
        assert_eq!(log.len(), 14000);
    }

    #[test]
    fn empty_log_is_header_only() {
        let text = EpisodeLog::new(meta()).to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_VERSION_LINE);
        assert_eq!(lines[2], CSV_COLUMNS.join(","));
        assert!(!text.contains('\r'));
        let back = parse_csv(text.as_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.meta, meta());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.1), "0.1");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
        assert_eq!(format_sig9(1.5e20), "1.5e20");
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-2.5e-7), "-2.5e-7");
    }

    #[test]
    fn plots_are_deterministic_and_leave_log_untouched() {
        let mut log = EpisodeLog::new(meta());
        for k in 1..=50 {
            log.record(rec(k)).unwrap();
        }
        let snapshot = log.clone();
        let world = World::default();
        let dir = tempfile::tempdir().unwrap();
        let first: Vec<Vec<u8>> =
            emit_plots(&log, &world, dir.path(), 1).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect();
        let second: Vec<Vec<u8>> =
            emit_plots(&log, &world, dir.path(), 1).unwrap().iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        assert_eq!(log, snapshot);
    }

    #[test]
    fn constant_log_draws_flat_lines_and_setpoints() {
        let mut log = EpisodeLog::new(meta());
        for k in 1..=10 {
            log.record(rec(k)).unwrap();
        }
        let svg = render_resources(&log, &World::default(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = poly.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.iter().all(|y| *y == ys[0]));
    }

    #[test]
    fn single_record_plots_as_markers() {
        let mut log = EpisodeLog::new(meta());
        log.record(rec(1)).unwrap();
        let world = World::default();
        for svg in [render_resources(&log, &world, 1), render_fatigue(&log, 1), render_loss_j(&log, 1), render_track(&log, &world, 1)] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert!(svg.contains("<circle"));
            assert!(!svg.contains("NaN"));
        }
        assert!(emit_plots(&EpisodeLog::new(meta()), &world, Path::new("."), 1).is_err());
    }

    #[test]
    fn stride_keeps_last_point() {
        let mut log = EpisodeLog::new(meta());
        for k in 1..=10 {
            log.record(rec(k)).unwrap();
        }
        let steps: Vec<u64> = strided(&log, 4).map(|r| r.step).collect();
        assert_eq!(steps, vec![1, 5, 9, 10]);
    }

    #[test]
    fn audit_flags_each_violation_kind() {
        let world = World::default();
        let initial = WorldState::from_levels([0.1; 4], [0.5, 0.5], &SetPoint::default());
        let mut log = EpisodeLog::new(meta());
        let mut r = rec(1);
        r.f_m = 7.0;
        log.record(r).unwrap();
        let mut r = rec(2);
        r.action = ActionId::WalkLeft;
        r.f_s = 11.0;
        log.record(r).unwrap();
        let mut r = rec(3);
        r.action = ActionId::Consume(Resource::First);
        r.pos_x = 1.5;
        log.record(r).unwrap();
        for k in 4..=10 {
            let mut r = rec(k);
            r.action = ActionId::Sleep;
            log.record(r).unwrap();
        }
        log.record(rec(11)).unwrap();
        let audit = audit_constraints(&log, &initial, &world);
        assert_eq!(
            audit,
            ConstraintAudit { walk_while_fatigued: 1, awake_while_exhausted: 1, short_sleep_bouts: 1, out_of_bounds: 1 }
        );
        assert_eq!(audit.total(), 4);
    }

    #[test]
    fn windows_and_statistics() {
        let records: Vec<StepRecord> = (1..=100).map(rec).collect();
        assert_eq!(window(&records, 0.0, 0.1).len(), 10);
        assert_eq!(window(&records, 0.9, 1.0)[0].step, 91);
        assert_eq!(median([3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean([1.0, 2.0, 3.0]), 2.0);
        assert!(mean(std::iter::empty()).is_nan());
    }

    fn arb_record() -> impl Strategy<Value = StepRecord> {
        let f = || prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0)];
        (
            (f(), f(), f(), f(), f(), f(), f()),
            (f(), f(), f(), f(), 0usize..10, any::<bool>()),
        )
            .prop_map(|((clock, level1, level2, f_m, f_s, drive, reward), (loss_f, loss_j, pos_x, pos_y, a, explored))| {
                StepRecord {
                    step: 0,
                    clock,
                    level1,
                    level2,
                    f_m,
                    f_s,
                    drive,
                    reward,
                    loss_f,
                    loss_j,
                    action: ActionId::ALL[a],
                    explored,
                    pos_x,
                    pos_y,
                }
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_identity_at_nine_digits(records in proptest::collection::vec(arb_record(), 0..30), first in 1u64..1000) {
            let mut log = EpisodeLog::starting_at(meta(), first);
            for (i, mut r) in records.into_iter().enumerate() {
                r.step = first + i as u64;
                log.record(r).unwrap();
            }
            let text = log.to_csv_string();
            let back = parse_csv(text.as_bytes()).unwrap();
            let expected: Vec<StepRecord> = log.records.iter().map(StepRecord::rounded).collect();
            prop_assert_eq!(&back.records, &expected);
            prop_assert_eq!(back.to_csv_string(), text);
        }
    }
}
