//! Seeded synthetic log and incident generators.
//!
//! Templates contain typed slots such as `{ip}` or `{user}`. Templates that
//! start with `{"` are JSON objects and produce structured records.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{IncidentLabel, IncidentRecord};
use crate::corpus::LogRecord;
use crate::seed::{self, Rng};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("no template specs")]
    NoSpecs,
    #[error("template weights sum to {0}, expected 1")]
    BadWeights(f64),
    #[error("anomaly_rate must be in [0, 1), got {0}")]
    BadAnomalyRate(f64),
    #[error("n must be at least 1")]
    Empty,
    #[error("template {id} is not valid JSON after rendering: {message}")]
    BadJsonTemplate { id: String, message: String },
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Ip,
    User,
    Pid,
    Path,
    Hex,
    Port,
    Host,
    Num,
}

impl SlotKind {
    pub const ALL: [SlotKind; 8] = [
        SlotKind::Ip,
        SlotKind::User,
        SlotKind::Pid,
        SlotKind::Path,
        SlotKind::Hex,
        SlotKind::Port,
        SlotKind::Host,
        SlotKind::Num,
    ];

    fn name(self) -> &'static str {
        match self {
            SlotKind::Ip => "ip",
            SlotKind::User => "user",
            SlotKind::Pid => "pid",
            SlotKind::Path => "path",
            SlotKind::Hex => "hex",
            SlotKind::Port => "port",
            SlotKind::Host => "host",
            SlotKind::Num => "num",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn sample(self, rng: &mut Rng) -> String {
        const USERS: [&str; 24] = [
            "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory", "niaj",
            "olivia", "peggy", "rupert", "sybil", "trent", "victor", "walter", "xena", "yusuf", "zoe", "root", "admin",
        ];
        const DIRS: [&str; 7] = ["/var/log", "/etc", "/home/shared", "/opt/app", "/usr/bin", "/srv/www", "/tmp"];
        const FILES: [&str; 8] = [
            "app.log", "passwd", "config.yaml", "index.html", "backup.tar", "run.sh", "data.db", "report.csv",
        ];
        const HOSTS: [&str; 4] = ["node", "web", "db", "cache"];
        match self {
            SlotKind::Ip => format!(
                "10.{}.{}.{}",
                rng.random_range(0..4),
                rng.random_range(0..256),
                rng.random_range(1..255)
            ),
            SlotKind::User => USERS.choose(rng).expect("non-empty").to_string(),
            SlotKind::Pid => rng.random_range(100..32768).to_string(),
            SlotKind::Path => format!("{}/{}", DIRS.choose(rng).expect("non-empty"), FILES.choose(rng).expect("non-empty")),
            SlotKind::Hex => format!("{:08x}", rng.random::<u32>()),
            SlotKind::Port => rng.random_range(1024..65536).to_string(),
            SlotKind::Host => format!("{}{}", HOSTS.choose(rng).expect("non-empty"), rng.random_range(0..64)),
            SlotKind::Num => rng.random_range(0..5000).to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutator {
    /// Permute field values across keys (structured) or whitespace tokens.
    FieldShuffle,
    /// Fill every slot with a value of a different slot type.
    SlotSwap,
    /// First half of this template joined to the second half of another.
    Splice,
}

pub const ALL_MUTATORS: [Mutator; 3] = [Mutator::FieldShuffle, Mutator::SlotSwap, Mutator::Splice];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub id: String,
    pub template: String,
    pub weight: f64,
    pub anomaly_mutators: Vec<Mutator>,
}

impl TemplateSpec {
    pub fn is_structured(&self) -> bool {
        self.template.trim_start().starts_with("{\"")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub name: String,
    pub specs: Vec<TemplateSpec>,
    /// Columns with categorical values, for hybrid featurization.
    pub structured_columns: Vec<String>,
}

fn uniform_specs(prefix: &str, templates: &[&str]) -> Vec<TemplateSpec> {
    let w = 1.0 / templates.len() as f64;
    templates
        .iter()
        .enumerate()
        .map(|(i, t)| TemplateSpec {
            id: format!("{prefix}-{i:02}"),
            template: t.to_string(),
            weight: w,
            anomaly_mutators: ALL_MUTATORS.to_vec(),
        })
        .collect()
}

const SYSLOG: [&str; 12] = [
    "sshd: Accepted password for {user} from {ip} port {port} ssh2",
    "sshd: Failed password for invalid user {user} from {ip} port {port}",
    "kernel: eth0 link state changed to up on {host}",
    "cron: session opened for user {user} by pid {pid}",
    "nginx: GET {path} returned status 200 in {num} ms",
    "nginx: POST {path} returned status 500 after {num} ms",
    "sudo: command run by {user} as root command {path}",
    "systemd: Started session {num} of user {user}",
    "dockerd: container {hex} exited with code {num}",
    "postfix: message {hex} queued for delivery to {user}",
    "auditd: file {path} modified by process {pid}",
    "firewall: blocked inbound connection from {ip} to port {port}",
];

const JSONL: [&str; 8] = [
    r#"{"action": "login", "category": "identity", "channel": "ssh", "result": "success", "severity": "low", "src_ip": "{ip}", "user": "{user}"}"#,
    r#"{"action": "logout", "category": "identity", "channel": "web", "result": "success", "session": "{hex}", "severity": "info", "user": "{user}"}"#,
    r#"{"action": "file_read", "category": "filesystem", "path": "{path}", "pid": "{pid}", "result": "allowed", "severity": "low", "user": "{user}"}"#,
    r#"{"action": "http_request", "category": "web", "method": "GET", "path": "{path}", "result": "ok", "severity": "info", "status": "200", "took_ms": "{num}"}"#,
    r#"{"action": "dns_query", "category": "network", "domain": "{host}.corp.example", "protocol": "udp", "result": "resolved", "severity": "info", "src_ip": "{ip}"}"#,
    r#"{"action": "process_start", "category": "process", "cmd": "{path}", "parent": "{pid}", "result": "allowed", "severity": "medium", "user": "{user}"}"#,
    r#"{"action": "port_scan", "category": "network", "dst_port": "{port}", "protocol": "tcp", "result": "blocked", "severity": "high", "src_ip": "{ip}"}"#,
    r#"{"action": "password_change", "admin": "{user}", "category": "identity", "result": "success", "severity": "medium", "target": "{user}"}"#,
];

const OOD: [&str; 10] = [
    "PostgreSQL checkpoint complete wrote {num} buffers in {num} seconds",
    "RAID controller reports degraded array on slot {num} serial {hex}",
    "BIOS thermal sensor CPU{num} temperature {num} celsius exceeds threshold",
    "Kafka consumer group rebalance triggered generation {num} members {num}",
    "JVM GarbageCollector pause {num} milliseconds heap {num} megabytes",
    "SMART attribute Reallocated_Sector_Ct raw value {num} on disk {hex}",
    "Kubelet evicted pod {hex} namespace payments reason MemoryPressure",
    "Zookeeper quorum election finished leader myid {num} epoch {num}",
    "HVAC unit {num} airflow alarm cleared by technician badge {hex}",
    "Printer spooler queue {num} jammed tray {num} toner {num} percent",
];

impl Family {
    /// Unstructured daemon-style lines, 12 templates.
    pub fn syslog() -> Self {
        Self {
            name: "syslog".into(),
            specs: uniform_specs("syslog", &SYSLOG),
            structured_columns: Vec::new(),
        }
    }

    /// Structured JSON events, 8 templates.
    pub fn jsonl() -> Self {
        Self {
            name: "jsonl".into(),
            specs: uniform_specs("jsonl", &JSONL),
            structured_columns: ["action", "category", "channel", "method", "protocol", "result", "severity", "status"]
                .map(String::from)
                .to_vec(),
        }
    }

    /// Syslog and JSONL together, 20 templates.
    pub fn mixed() -> Self {
        let mut specs = uniform_specs("syslog", &SYSLOG);
        specs.extend(uniform_specs("jsonl", &JSONL));
        let w = 1.0 / specs.len() as f64;
        for s in &mut specs {
            s.weight = w;
        }
        Self {
            name: "mixed".into(),
            specs,
            structured_columns: Self::jsonl().structured_columns,
        }
    }

    /// Infrastructure lines sharing no template with the other families.
    pub fn ood() -> Self {
        Self {
            name: "ood".into(),
            specs: uniform_specs("ood", &OOD),
            structured_columns: Vec::new(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self, SynthError> {
        match name {
            "syslog" => Ok(Self::syslog()),
            "jsonl" => Ok(Self::jsonl()),
            "mixed" => Ok(Self::mixed()),
            "ood" => Ok(Self::ood()),
            _ => Err(SynthError::UnknownFamily(name.to_string())),
        }
    }
}

enum Piece {
    Text(String),
    Slot(SlotKind),
}

fn parse_template(template: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| SlotKind::parse(&after[..close]).map(|k| (close, k))) {
            Some((close, kind)) => {
                text.push_str(&rest[..open]);
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(kind));
                rest = &after[close + 1..];
            }
            None => {
                text.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

/// Fill slots; `swap` draws each value from a different slot type.
fn render(template: &str, rng: &mut Rng, swap: bool) -> String {
    parse_template(template)
        .into_iter()
        .map(|p| match p {
            Piece::Text(t) => t,
            Piece::Slot(kind) if swap => {
                let others: Vec<SlotKind> = SlotKind::ALL.into_iter().filter(|k| *k != kind).collect();
                others.choose(rng).expect("other kinds exist").sample(rng)
            }
            Piece::Slot(kind) => kind.sample(rng),
        })
        .collect()
}

fn has_slots(template: &str) -> bool {
    parse_template(template).iter().any(|p| matches!(p, Piece::Slot(_)))
}

fn parse_fields(spec: &TemplateSpec, text: &str) -> Result<BTreeMap<String, String>, SynthError> {
    let value: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| SynthError::BadJsonTemplate {
            id: spec.id.clone(),
            message: e.to_string(),
        })?;
    Ok(value
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            (k, v)
        })
        .collect())
}

/// Shuffle, then rotate if the shuffle happened to be the identity.
fn shuffled<T: Clone + PartialEq>(items: &[T], rng: &mut Rng) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(rng);
    if out == items && items.len() > 1 {
        out.rotate_left(1);
    }
    out
}

fn make_record(spec: &TemplateSpec, id: String, source: &str, text: String, fields: Option<BTreeMap<String, String>>, anomaly: bool) -> LogRecord {
    let mut record = match fields {
        Some(f) => LogRecord::structured(id, f, source),
        None => LogRecord::new(id, text, source),
    };
    record.template = Some(spec.id.clone());
    record.anomaly = Some(anomaly);
    record
}

fn generate_one(family: &Family, index: usize, stream: u64, anomaly_rate: f64) -> Result<LogRecord, SynthError> {
    let mut rng = seed::rng(seed::derive_index(stream, index as u64));
    let mut u: f64 = rng.random();
    let spec = family
        .specs
        .iter()
        .find(|s| {
            if u < s.weight {
                true
            } else {
                u -= s.weight;
                false
            }
        })
        .unwrap_or_else(|| family.specs.last().expect("validated non-empty"));
    let anomalous = rng.random::<f64>() < anomaly_rate && !spec.anomaly_mutators.is_empty();
    let id = format!("{}-{index:06}", family.name);
    let structured = spec.is_structured();
    if !anomalous {
        let text = render(&spec.template, &mut rng, false);
        let fields = structured.then(|| parse_fields(spec, &text)).transpose()?;
        return Ok(make_record(spec, id, &family.name, text, fields, false));
    }
    let mut mutator = *spec.anomaly_mutators.choose(&mut rng).expect("non-empty");
    if mutator == Mutator::SlotSwap && !has_slots(&spec.template) {
        mutator = Mutator::FieldShuffle;
    }
    if mutator == Mutator::Splice && family.specs.len() < 2 {
        mutator = Mutator::FieldShuffle;
    }
    let base = render(&spec.template, &mut rng, mutator == Mutator::SlotSwap);
    let (text, fields) = match (mutator, structured) {
        (Mutator::SlotSwap, _) => {
            let fields = structured.then(|| parse_fields(spec, &base)).transpose()?;
            (base, fields)
        }
        (Mutator::FieldShuffle, true) => {
            let fields = parse_fields(spec, &base)?;
            let values: Vec<String> = fields.values().cloned().collect();
            let fields: BTreeMap<String, String> = fields.into_keys().zip(shuffled(&values, &mut rng)).collect();
            (base, Some(fields))
        }
        (Mutator::FieldShuffle, false) => {
            let tokens: Vec<&str> = base.split_whitespace().collect();
            (shuffled(&tokens, &mut rng).join(" "), None)
        }
        (Mutator::Splice, _) => {
            let others: Vec<&TemplateSpec> = family.specs.iter().filter(|s| s.id != spec.id).collect();
            let other = *others.choose(&mut rng).expect("two or more specs");
            let tail = render(&other.template, &mut rng, false);
            if structured && other.is_structured() {
                let a = parse_fields(spec, &base)?;
                let b = parse_fields(other, &tail)?;
                let mut fields: BTreeMap<String, String> = a.iter().take(a.len().div_ceil(2)).map(|(k, v)| (k.clone(), v.clone())).collect();
                for (k, v) in b.iter().skip(b.len() / 2) {
                    fields.entry(k.clone()).or_insert_with(|| v.clone());
                }
                (base, Some(fields))
            } else {
                let head: Vec<&str> = base.split_whitespace().collect();
                let tail_tokens: Vec<&str> = tail.split_whitespace().collect();
                let mut joined: Vec<&str> = head[..head.len().div_ceil(2)].to_vec();
                joined.extend_from_slice(&tail_tokens[tail_tokens.len() / 2..]);
                (joined.join(" "), None)
            }
        }
    };
    Ok(make_record(spec, id, &family.name, text, fields, true))
}

/// Generate `n` records. Record `i` depends only on `(seed, family, i)`.
pub fn generate(family: &Family, n: usize, seed_value: u64, anomaly_rate: f64) -> Result<Vec<LogRecord>, SynthError> {
    if family.specs.is_empty() {
        return Err(SynthError::NoSpecs);
    }
    if n == 0 {
        return Err(SynthError::Empty);
    }
    let total: f64 = family.specs.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-9 || family.specs.iter().any(|s| s.weight < 0.0) {
        return Err(SynthError::BadWeights(total));
    }
    if !(0.0..1.0).contains(&anomaly_rate) {
        return Err(SynthError::BadAnomalyRate(anomaly_rate));
    }
    let stream = seed::derive(seed_value, &format!("synth-{}", family.name));
    (0..n)
        .into_par_iter()
        .map(|i| generate_one(family, i, stream, anomaly_rate))
        .collect()
}

/// `benign` template-conforming records plus `corrupted` records produced by
/// `mutator`, shuffled together and renumbered so ids carry no label.
pub fn planted_corpus(
    family: &Family,
    benign: usize,
    corrupted: usize,
    mutator: Mutator,
    seed_value: u64,
) -> Result<Vec<LogRecord>, SynthError> {
    generate(family, 1, seed_value, 0.0)?;
    let mut forced = family.clone();
    for spec in &mut forced.specs {
        spec.anomaly_mutators = vec![mutator];
    }
    let clean = seed::derive(seed_value, "planted-benign");
    let dirty = seed::derive(seed_value, "planted-corrupt");
    let mut records = (0..benign)
        .into_par_iter()
        .map(|i| generate_one(family, i, clean, 0.0))
        .chain((0..corrupted).into_par_iter().map(|i| generate_one(&forced, i, dirty, 1.0)))
        .collect::<Result<Vec<_>, _>>()?;
    records.shuffle(&mut seed::named_rng(seed_value, "planted-order"));
    for (i, r) in records.iter_mut().enumerate() {
        r.id = format!("{}-{i:06}", family.name);
    }
    Ok(records)
}

const TP_TEXTS: [&str; 4] = [
    "Malware beacon detected from {host} to external address {ip} by endpoint sensor",
    "Credential dumping tool executed on {host} by {user} process {pid}",
    "Ransomware encryption behavior observed on {host} touching {path}",
    "Data exfiltration over DNS tunnel from {host} to {ip} volume {num} MB",
];

const BP_TEXTS: [&str; 4] = [
    "Scheduled red team exercise scanning {host} approved change ticket {hex}",
    "Authorized penetration test from {ip} against {host} within maintenance window",
    "Vulnerability scanner sweep by security team reached {host} port {port}",
    "Planned phishing simulation email opened by {user} campaign {hex}",
];

const FP_TEXTS: [&str; 4] = [
    "Antivirus heuristic flagged signed installer {path} on {host} later verified clean",
    "Impossible travel alert for {user} caused by corporate VPN egress change",
    "Spike in failed logins for {user} traced to expired saved password on phone",
    "Suspicious PowerShell rule matched inventory script {path} deployed by IT",
];

/// Incidents in three well separated groups, one per label.
pub fn generate_incidents(n: usize, seed_value: u64) -> Vec<IncidentRecord> {
    let stream = seed::derive(seed_value, "synth-incidents");
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_index(stream, i as u64));
            let (label, texts) = match rng.random_range(0..3) {
                0 => (IncidentLabel::Tp, &TP_TEXTS),
                1 => (IncidentLabel::Bp, &BP_TEXTS),
                _ => (IncidentLabel::Fp, &FP_TEXTS),
            };
            let template = texts.choose(&mut rng).expect("non-empty");
            IncidentRecord {
                id: format!("inc-{i:05}"),
                text: render(template, &mut rng, false),
                label: Some(label),
                timestamp: Some(format!("2026-01-{:02}T{:02}:{:02}:00Z", 1 + i / 1440 % 28, i / 60 % 24, i % 60)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{drain_parse, DrainConfig};
    use std::collections::HashMap;

    #[test]
    fn slots_render_and_literals_survive() {
        let mut rng = seed::rng(1);
        let text = render(r#"{"a": "{user}", "b": "{nope}"}"#, &mut rng, false);
        assert!(text.contains("{nope}"));
        assert!(!text.contains("{user}"));
        for kind in SlotKind::ALL {
            let v = kind.sample(&mut rng);
            assert!(!v.is_empty() && !v.contains(char::is_whitespace), "{kind:?} -> {v}");
        }
    }

    #[test]
    fn zero_rate_means_no_anomalies_and_seed_determinism() {
        let fam = Family::mixed();
        let a = generate(&fam, 300, 7, 0.0).unwrap();
        assert!(a.iter().all(|r| r.anomaly == Some(false)));
        let b = generate(&fam, 300, 7, 0.0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate(&fam, 300, 8, 0.0).unwrap();
        assert_ne!(a, c);
        let templates: std::collections::BTreeSet<_> = a.iter().map(|r| r.template.clone().unwrap()).collect();
        assert_eq!(templates.len(), 20);
    }

    #[test]
    fn anomaly_count_within_binomial_interval() {
        let recs = generate(&Family::syslog(), 1000, 3, 0.025).unwrap();
        let k = recs.iter().filter(|r| r.anomaly == Some(true)).count();
        assert!((16..=35).contains(&k), "{k} anomalies");
    }

    #[test]
    fn mutators_change_the_record() {
        let fam = Family::jsonl();
        let recs = generate(&fam, 400, 5, 0.5).unwrap();
        let anomalies: Vec<&LogRecord> = recs.iter().filter(|r| r.anomaly == Some(true)).collect();
        assert!(anomalies.len() > 100);
        for r in &recs {
            assert!(r.fields.is_some(), "{}", r.raw);
        }
        let syslog = generate(&Family::syslog(), 400, 5, 0.5).unwrap();
        assert!(syslog.iter().all(|r| r.fields.is_none() && !r.raw.is_empty()));
    }

    #[test]
    fn input_validation() {
        let mut fam = Family::syslog();
        assert!(matches!(generate(&fam, 10, 0, 1.0), Err(SynthError::BadAnomalyRate(_))));
        fam.specs[0].weight = 0.9;
        assert!(matches!(generate(&fam, 10, 0, 0.0), Err(SynthError::BadWeights(_))));
        fam.specs.clear();
        assert!(matches!(generate(&fam, 10, 0, 0.0), Err(SynthError::NoSpecs)));
        assert!(Family::by_name("nope").is_err());
    }

    /// Fraction of records whose Drain cluster and ground-truth template are
    /// each other's majority match.
    fn drain_agreement(recs: &[LogRecord]) -> f64 {
        let idx = drain_parse(recs, &DrainConfig::default()).unwrap();
        let assigned = idx.assignment_map();
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for r in recs {
            *counts.entry((r.template.as_deref().unwrap(), assigned[r.id.as_str()])).or_default() += 1;
        }
        let majority = |by_truth: bool| {
            let mut best: HashMap<&str, (&str, usize)> = HashMap::new();
            for (&(t, d), &c) in &counts {
                let (key, val) = if by_truth { (t, d) } else { (d, t) };
                let e = best.entry(key).or_insert((val, 0));
                if c > e.1 || (c == e.1 && val < e.0) {
                    *e = (val, c);
                }
            }
            best
        };
        let truth_to_drain = majority(true);
        let drain_to_truth = majority(false);
        let agree = recs
            .iter()
            .filter(|r| {
                let t = r.template.as_deref().unwrap();
                let d = assigned[r.id.as_str()];
                truth_to_drain[t].0 == d && drain_to_truth[d].0 == t
            })
            .count();
        agree as f64 / recs.len() as f64
    }

    #[test]
    fn drain_recovers_ground_truth_templates() {
        for fam in [Family::syslog(), Family::jsonl(), Family::mixed(), Family::ood()] {
            let recs = generate(&fam, 2000, 11, 0.0).unwrap();
            let a = drain_agreement(&recs);
            assert!(a >= 0.95, "{}: agreement {a}", fam.name);
        }
    }

    #[test]
    fn planted_corpus_counts_and_ids() {
        let recs = planted_corpus(&Family::jsonl(), 195, 5, Mutator::FieldShuffle, 4).unwrap();
        assert_eq!(recs.len(), 200);
        assert_eq!(recs.iter().filter(|r| r.anomaly == Some(true)).count(), 5);
        let ids: std::collections::BTreeSet<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), 200);
        assert_eq!(recs, planted_corpus(&Family::jsonl(), 195, 5, Mutator::FieldShuffle, 4).unwrap());
    }

    #[test]
    fn incidents_cover_all_labels() {
        let inc = generate_incidents(300, 2);
        for label in [IncidentLabel::Tp, IncidentLabel::Bp, IncidentLabel::Fp] {
            let n = inc.iter().filter(|i| i.label == Some(label)).count();
            assert!(n > 70, "{label:?}: {n}");
        }
        assert_eq!(inc, generate_incidents(300, 2));
    }
}
