use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write;

/// One CSV row. Rows are written when an episode ends and every
/// `metrics_every` steps; on the periodic rows `episode_reward` is the
/// running total of the unfinished episode and `success` is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub episode_reward: f64,
    pub reward_ma100: f64,
    pub reward_std100: f64,
    pub success: bool,
    pub success_ma100: f64,
    pub ae1_mse: f64,
    pub ae2_mse: f64,
    pub critic_loss: f64,
    pub eps: [f64; 3],
    pub bytes_up_cum: u64,
    pub bytes_down_cum: u64,
    /// Per-link totals in `LINK_COLUMNS` order.
    pub link_bytes: [u64; 6],
}

pub const LINK_COLUMNS: [&str; 6] = [
    "bytes_agent1_agent2_cum",
    "bytes_agent2_agent1_cum",
    "bytes_agent1_critic_cum",
    "bytes_agent2_critic_cum",
    "bytes_critic_agent1_cum",
    "bytes_critic_agent2_cum",
];

pub const HEADER: [&str; 15] = [
    "step",
    "episode",
    "episode_reward",
    "reward_ma100",
    "reward_std100",
    "success",
    "success_ma100",
    "ae1_mse",
    "ae2_mse",
    "critic_loss",
    "eps1",
    "eps2",
    "eps3",
    "bytes_up_cum",
    "bytes_down_cum",
];

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    let f = format!("{x:.decimals$}");
    if f.contains('.') {
        f.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        f
    }
}

impl MetricsRow {
    pub fn header() -> String {
        let mut cols: Vec<&str> = HEADER.to_vec();
        cols.extend(LINK_COLUMNS);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            sig9(self.episode_reward),
            sig9(self.reward_ma100),
            sig9(self.reward_std100),
            self.success as u8,
            sig9(self.success_ma100),
            sig9(self.ae1_mse),
            sig9(self.ae2_mse),
            sig9(self.critic_loss),
            sig9(self.eps[0]),
            sig9(self.eps[1]),
            sig9(self.eps[2]),
            self.bytes_up_cum,
            self.bytes_down_cum,
        )
        .unwrap();
        for b in self.link_bytes {
            write!(s, ",{b}").unwrap();
        }
        s
    }
}

/// Trailing statistics over the last `window` completed episodes.
#[derive(Clone, Debug)]
pub struct EpisodeWindow {
    window: usize,
    items: VecDeque<(f64, bool)>,
}

impl EpisodeWindow {
    pub fn new(window: usize) -> Self {
        assert!(window > 0);
        Self {
            window,
            items: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, reward: f64, success: bool) {
        if self.items.len() == self.window {
            self.items.pop_front();
        }
        self.items.push_back((reward, success));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mean and population standard deviation of episode rewards; zeros when empty.
    pub fn reward_stats(&self) -> (f64, f64) {
        if self.items.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.items.len() as f64;
        let mean = self.items.iter().map(|i| i.0).sum::<f64>() / n;
        let var = self.items.iter().map(|i| (i.0 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn success_rate(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().filter(|i| i.1).count() as f64 / self.items.len() as f64
    }
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", MetricsRow::header())?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        writeln!(self.out, "{}", row.to_csv())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}
