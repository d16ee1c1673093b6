//! Seeded synthetic databases standing in for journal-entry ledgers and
//! daily mobility graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    date_to_days, days_to_date, Database, DbError, Edge, MetaValue, Metadata, MultiGraph, Node,
    Record, Sample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Bookkeeping,
    Mobility,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bookkeeping" => Ok(SynthKind::Bookkeeping),
            "mobility" => Ok(SynthKind::Mobility),
            other => Err(format!("unknown kind `{other}` (bookkeeping|mobility)")),
        }
    }
}

pub const ACCOUNT_TYPES: [&str; 11] = [
    "cash",
    "receivables",
    "inventory",
    "prepaid",
    "fixed_assets",
    "payables",
    "accrued",
    "equity",
    "revenue",
    "cogs",
    "opex",
];

pub const POI_TYPES: [&str; 10] = [
    "home",
    "work",
    "school",
    "restaurant",
    "shop",
    "gym",
    "park",
    "cafe",
    "clinic",
    "friend",
];

const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

const CASH: usize = 0;
const RECEIVABLES: usize = 1;
const INVENTORY: usize = 2;
const PREPAID: usize = 3;
const FIXED_ASSETS: usize = 4;
const PAYABLES: usize = 5;
const ACCRUED: usize = 6;
const EQUITY: usize = 7;
const REVENUE: usize = 8;
const COGS: usize = 9;
const OPEX: usize = 10;

/// Account role: (account type, min instances, max instances).
type Role = (usize, usize, usize);
/// Money flow from credited role to debited role: (src, dst, min mult, max mult, log10 amount).
type Flow = (usize, usize, usize, usize, f64);

/// When a process books its entries.
#[derive(Clone, Copy)]
enum Schedule {
    AnyBusinessDay,
    /// Last business day of a month.
    MonthEnd,
    /// Weekly run on a fixed weekday (0 = Monday).
    Weekly(i64),
}

struct Process {
    roles: &'static [Role],
    flows: &'static [Flow],
    schedule: Schedule,
    /// Share of entries flagged as reversing entries.
    reversal: f64,
}

const PROCESSES: [Process; 8] = [
    // credit sale with cost of goods
    Process {
        roles: &[(REVENUE, 1, 1), (RECEIVABLES, 1, 4), (INVENTORY, 1, 1), (COGS, 1, 1)],
        flows: &[(0, 1, 1, 3, 4.0), (2, 3, 1, 2, 3.6)],
        schedule: Schedule::AnyBusinessDay,
        reversal: 0.0,
    },
    // purchase on credit
    Process {
        roles: &[(PAYABLES, 1, 3), (INVENTORY, 1, 1)],
        flows: &[(0, 1, 1, 4, 3.5)],
        schedule: Schedule::AnyBusinessDay,
        reversal: 0.0,
    },
    // customer collections
    Process {
        roles: &[(RECEIVABLES, 1, 6), (CASH, 1, 1)],
        flows: &[(0, 1, 1, 3, 3.8)],
        schedule: Schedule::AnyBusinessDay,
        reversal: 0.0,
    },
    // equity injection
    Process {
        roles: &[(EQUITY, 1, 1), (CASH, 1, 2)],
        flows: &[(0, 1, 1, 2, 5.0)],
        schedule: Schedule::MonthEnd,
        reversal: 0.0,
    },
    // operating expenses paid in cash
    Process {
        roles: &[(CASH, 1, 1), (OPEX, 2, 8)],
        flows: &[(0, 1, 1, 2, 3.0)],
        schedule: Schedule::AnyBusinessDay,
        reversal: 0.0,
    },
    // vendor payments
    Process {
        roles: &[(CASH, 1, 1), (PAYABLES, 1, 5)],
        flows: &[(0, 1, 1, 3, 3.7)],
        schedule: Schedule::Weekly(3),
        reversal: 0.0,
    },
    // capital expenditure and depreciation
    Process {
        roles: &[(CASH, 1, 1), (FIXED_ASSETS, 1, 2), (OPEX, 1, 1)],
        flows: &[(0, 1, 1, 2, 4.5), (1, 2, 1, 2, 3.2)],
        schedule: Schedule::MonthEnd,
        reversal: 0.0,
    },
    // prepaid amortization and accruals
    Process {
        roles: &[(PREPAID, 1, 1), (OPEX, 1, 4), (ACCRUED, 1, 1)],
        flows: &[(0, 1, 1, 3, 2.8), (2, 1, 1, 2, 2.9)],
        schedule: Schedule::MonthEnd,
        reversal: 0.4,
    },
];

/// Generates `n` samples of the given kind with `regimes` behavioural modes.
/// Output is a pure function of the arguments.
pub fn generate_synthetic(
    kind: SynthKind,
    n: usize,
    regimes: usize,
    seed: u64,
) -> Result<Database, DbError> {
    if n == 0 {
        return Err(DbError::Generator("n must be at least 1".into()));
    }
    if regimes == 0 {
        return Err(DbError::Generator("regimes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let regime = rng.random_range(0..regimes);
            match kind {
                SynthKind::Bookkeeping => journal_entry(&mut rng, i, regime, regimes),
                SynthKind::Mobility => activity_day(&mut rng, i, regime),
            }
        })
        .collect();
    Database::new(samples)
}

fn processes_for(regime: usize, regimes: usize) -> Vec<usize> {
    let total = PROCESSES.len();
    if regimes == 1 {
        return (0..total).collect();
    }
    if regimes <= total {
        let lo = regime * total / regimes;
        let hi = (regime + 1) * total / regimes;
        (lo..hi).collect()
    } else {
        vec![regime % total]
    }
}

fn lognormal(rng: &mut ChaCha8Rng, log10_median: f64, sigma: f64) -> f64 {
    // Box-Muller; one uniform pair per draw keeps the stream simple.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    let x = (log10_median * std::f64::consts::LN_10 + sigma * z).exp();
    (x * 100.0).round() / 100.0
}

/// First day of the synthetic fiscal year, 2021-01-01.
const YEAR_START: i64 = 18628;

fn is_business_day(days: i64) -> bool {
    use chrono::Datelike;
    days_to_date(days).weekday().num_days_from_monday() < 5
}

fn booking_day(rng: &mut ChaCha8Rng, schedule: Schedule) -> i64 {
    use chrono::Datelike;
    match schedule {
        Schedule::AnyBusinessDay => loop {
            let d = YEAR_START + rng.random_range(0..365);
            if is_business_day(d) {
                break d;
            }
        },
        Schedule::MonthEnd => {
            let month = rng.random_range(1..=12u32);
            let next = if month == 12 {
                chrono::NaiveDate::from_ymd_opt(2022, 1, 1)
            } else {
                chrono::NaiveDate::from_ymd_opt(2021, month + 1, 1)
            }
            .expect("valid month");
            let mut d = date_to_days(next) - 1;
            while !is_business_day(d) {
                d -= 1;
            }
            d
        }
        Schedule::Weekly(weekday) => {
            // 2021-01-04 is the first Monday of the year
            let week = rng.random_range(0..52);
            let d = YEAR_START + 3 + 7 * week + weekday;
            debug_assert_eq!(
                days_to_date(d).weekday().num_days_from_monday() as i64,
                weekday
            );
            d
        }
    }
}

fn journal_entry(rng: &mut ChaCha8Rng, index: usize, regime: usize, regimes: usize) -> Sample {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    // journal clerks own processes; reclassifications go to a per-regime clerk
    let requester;
    let (schedule, reversal_rate);

    if rng.random_bool(0.02) {
        // reclassification within one account
        let label = if regime % 2 == 0 { CASH } else { OPEX };
        requester = format!("r{regime}");
        (schedule, reversal_rate) = (Schedule::AnyBusinessDay, 0.0);
        nodes.push(Node::labeled(0, ACCOUNT_TYPES[label]));
        for _ in 0..rng.random_range(1..=3) {
            edges.push(Edge::new(0, 0, vec![lognormal(rng, 3.0, 0.4)]));
        }
    } else {
        let choices = processes_for(regime, regimes);
        let pi = choices[rng.random_range(0..choices.len())];
        let p = &PROCESSES[pi];
        requester = format!("p{pi}_{}", rng.random_range(0..3));
        (schedule, reversal_rate) = (p.schedule, p.reversal);
        let mut role_nodes: Vec<Vec<usize>> = Vec::with_capacity(p.roles.len());
        for &(label, lo, hi) in p.roles {
            let count = rng.random_range(lo..=hi);
            let ids = (0..count)
                .map(|_| {
                    let id = nodes.len();
                    nodes.push(Node::labeled(id, ACCOUNT_TYPES[label]));
                    id
                })
                .collect();
            role_nodes.push(ids);
        }
        for &(src, dst, lo, hi, scale) in p.flows {
            let (a, b) = (&role_nodes[src], &role_nodes[dst]);
            let pairs: Vec<(usize, usize)> = if a.len() == 1 {
                b.iter().map(|&v| (a[0], v)).collect()
            } else if b.len() == 1 {
                a.iter().map(|&u| (u, b[0])).collect()
            } else {
                a.iter().enumerate().map(|(i, &u)| (u, b[i % b.len()])).collect()
            };
            for (u, v) in pairs {
                for _ in 0..rng.random_range(lo..=hi) {
                    edges.push(Edge::new(u, v, vec![lognormal(rng, scale, 0.3)]));
                }
            }
        }
        if rng.random_bool(0.03) {
            let v = rng.random_range(0..nodes.len());
            edges.push(Edge::new(v, v, vec![lognormal(rng, 2.5, 0.3)]));
        }
    }

    let total: f64 = edges.iter().map(|e| e.attrs[0]).sum();
    let effective = booking_day(rng, schedule);
    // entries are keyed in on a business day shortly before they take effect
    let max_lead = if rng.random_bool(0.85) { 3 } else { 7 };
    let min_lead = if max_lead == 3 { 0 } else { 4 };
    let entry = loop {
        let d = effective - rng.random_range(min_lead..=max_lead);
        if is_business_day(d) {
            break d;
        }
    };
    let reversal = reversal_rate > 0.0 && rng.random_bool(reversal_rate);

    let mut meta = Record::new();
    meta.insert(
        "requester".into(),
        MetaValue::Str(requester),
    );
    meta.insert(
        "approver".into(),
        MetaValue::Str(format!("a{}_{}", regime, rng.random_range(0..3))),
    );
    meta.insert("reversal".into(), MetaValue::Bool(reversal));
    meta.insert(
        "entry_date".into(),
        MetaValue::Str(days_to_date(entry).format("%Y-%m-%d").to_string()),
    );
    meta.insert(
        "effective_date".into(),
        MetaValue::Str(days_to_date(effective).format("%Y-%m-%d").to_string()),
    );
    meta.insert(
        "total_amount".into(),
        MetaValue::Num((total * 100.0).round() / 100.0),
    );
    debug_assert_eq!(date_to_days(days_to_date(entry)), entry);

    Sample {
        id: format!("je{index:06}"),
        graph: MultiGraph { nodes, edges },
        meta: Metadata::Single(meta),
        eval_label: None,
    }
}

/// Daily routine templates: sequence of POIs after leaving home, usual departure hour.
const ROUTINES: [(&[&[usize]], f64); 3] = [
    // commuter
    (&[&[1], &[1, 3, 1], &[1, 5], &[1, 4]], 8.0),
    // student
    (&[&[2], &[2, 6], &[2, 7, 9], &[2, 5]], 7.5),
    // retiree
    (&[&[6, 7], &[4], &[8, 4], &[9, 3]], 10.0),
];

fn activity_day(rng: &mut ChaCha8Rng, index: usize, regime: usize) -> Sample {
    let (templates, depart) = ROUTINES[regime % ROUTINES.len()];
    let stops = templates[rng.random_range(0..templates.len())];
    let mut places: Vec<usize> = vec![0];
    let mut route = vec![0usize];
    for &poi in stops {
        let id = match places.iter().position(|&p| p == poi) {
            Some(i) => i,
            None => {
                places.push(poi);
                places.len() - 1
            }
        };
        route.push(id);
    }
    route.push(0);

    let nodes = places
        .iter()
        .enumerate()
        .map(|(i, &p)| Node::labeled(i, POI_TYPES[p]))
        .collect();
    let day = rng.random_range(0..7);
    let mut clock = depart + rng.random_range(-0.75..0.75);
    let mut edges = Vec::new();
    let mut records = Vec::new();
    for w in route.windows(2) {
        let distance = (lognormal(rng, 0.6, 0.4) * 10.0).round() / 10.0;
        let duration = (distance * 3.0 + rng.random_range(3.0..12.0)).round();
        edges.push(Edge::new(w[0], w[1], vec![duration, distance]));
        let mut rec = Record::new();
        rec.insert("start_time".into(), MetaValue::Num((clock * 100.0).round() / 100.0));
        rec.insert("duration".into(), MetaValue::Num(duration));
        rec.insert("day".into(), MetaValue::Str(WEEKDAYS[day].into()));
        records.push(rec);
        clock = (clock + duration / 60.0 + rng.random_range(1.0..4.0)).min(22.5);
    }

    Sample {
        id: format!("day{index:06}"),
        graph: MultiGraph { nodes, edges },
        meta: Metadata::Multiset { records },
        eval_label: None,
    }
}
