//! Task and scenario descriptions, plus the super-producer workload.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::provenance::{ConsumerProfile, ProducerProfile, RateLaw};
use crate::queue::{QueueId, TaskId};

/// How a task gives up the CPU on its own.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Behavior {
    /// Chance of a voluntary yield after each tick of running.
    pub yield_prob: f64,
    /// Ticks spent blocked after a yield; 0 means straight back to runnable.
    pub sleep_ticks: u64,
}

fn default_weight() -> u64 {
    1
}

fn silent() -> ProducerProfile {
    ProducerProfile::silent()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub arrival: u64,
    /// Ticks of work; `None` keeps the task busy for the whole run.
    #[serde(default)]
    pub cpu_demand: Option<u64>,
    #[serde(default = "silent")]
    pub producer: ProducerProfile,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default)]
    pub is_consumer: bool,
    /// Queue the task starts in under the multi-queue scheduler.
    #[serde(default)]
    pub initial_queue: Option<QueueId>,
    /// Share weight for the virtual-deadline baseline.
    #[serde(default = "default_weight")]
    pub weight: u64,
}

impl TaskSpec {
    pub fn new(id: u32) -> Self {
        TaskSpec {
            id: TaskId(id),
            name: String::new(),
            arrival: 0,
            cpu_demand: None,
            producer: ProducerProfile::silent(),
            behavior: Behavior::default(),
            is_consumer: false,
            initial_queue: None,
            weight: 1,
        }
    }

    pub fn consumer(id: u32) -> Self {
        TaskSpec {
            name: "consumer".into(),
            is_consumer: true,
            ..Self::new(id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Aegis,
    Fifo,
    Rr,
    Mlfq,
    Vdeadline,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Aegis,
        SchedulerKind::Fifo,
        SchedulerKind::Rr,
        SchedulerKind::Mlfq,
        SchedulerKind::Vdeadline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Aegis => "aegis",
            SchedulerKind::Fifo => "fifo",
            SchedulerKind::Rr => "rr",
            SchedulerKind::Mlfq => "mlfq",
            SchedulerKind::Vdeadline => "vdeadline",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown scheduler {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "one")]
    pub cores: usize,
    pub duration: u64,
    pub buffer_capacity: u64,
    pub consumer: ConsumerProfile,
    #[serde(default = "aegis")]
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub seed: u64,
}

fn aegis() -> SchedulerKind {
    SchedulerKind::Aegis
}

fn one() -> usize {
    1
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.duration == 0 {
            return bad("scenario.duration must be > 0".into());
        }
        if self.cores == 0 {
            return bad("scenario.cores must be >= 1".into());
        }
        if self.consumer.drain_per_tick == 0 {
            return bad("scenario.consumer.drain_per_tick must be > 0".into());
        }
        let consumers = self.tasks.iter().filter(|t| t.is_consumer).count();
        if consumers != 1 {
            return bad(format!("scenario.tasks must hold exactly one consumer, found {consumers}"));
        }
        let mut seen = HashSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !seen.insert(t.id) {
                return bad(format!("scenario.tasks[{i}].id {} is duplicated", t.id));
            }
            if !(0.0..=1.0).contains(&t.behavior.yield_prob) {
                return bad(format!("scenario.tasks[{i}].behavior.yield_prob must lie in [0, 1]"));
            }
            if t.cpu_demand == Some(0) {
                return bad(format!("scenario.tasks[{i}].cpu_demand must be > 0"));
            }
            if t.weight == 0 {
                return bad(format!("scenario.tasks[{i}].weight must be > 0"));
            }
            if t.is_consumer && t.initial_queue.is_some_and(|q| !q.is_primary()) {
                return bad(format!("scenario.tasks[{i}] is the consumer and must start in queue 1"));
            }
            if let RateLaw::Bursty { period: 0, .. } = t.producer.events_per_tick {
                return bad(format!("scenario.tasks[{i}].producer bursty period must be > 0"));
            }
        }
        Ok(())
    }

    pub fn consumer_id(&self) -> TaskId {
        self.tasks
            .iter()
            .find(|t| t.is_consumer)
            .map(|t| t.id)
            .expect("validated scenario has a consumer")
    }
}

/// Knobs of the super-producer workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperProducerSpec {
    /// Number of producer threads.
    pub intensity: u32,
    /// Events per tick of one producer thread while it runs.
    pub scan_rate: u64,
    pub drain_per_tick: u64,
    pub buffer_capacity: u64,
    pub duration: u64,
    #[serde(default = "one")]
    pub cores: usize,
    #[serde(default = "yes")]
    pub background: bool,
    /// Arrival tick of the persistent producers.
    #[serde(default)]
    pub start: u64,
    /// Replaces the persistent producers with periodic waves of fresh ones.
    #[serde(default)]
    pub stress: Option<StressWave>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressWave {
    /// Ticks between wave starts; the first wave arrives at tick 0.
    pub period: u64,
    /// CPU ticks of work each wave producer brings.
    pub demand: u64,
    /// Each producer arrives up to this many ticks after its wave starts.
    #[serde(default)]
    pub jitter: u64,
}

/// `intensity` identical tight-loop producers at `scan_rate` events per tick,
/// with ids `1..=intensity`, followed by three background tasks.
pub fn make_super_producer(intensity: u32, scan_rate: u64) -> Result<Vec<TaskSpec>> {
    if intensity == 0 {
        return Err(Error::InvalidSpec("super producer intensity must be >= 1".into()));
    }
    let mut tasks: Vec<TaskSpec> = (1..=intensity)
        .map(|i| TaskSpec {
            name: format!("producer-{i}"),
            producer: ProducerProfile::constant(scan_rate),
            ..TaskSpec::new(i)
        })
        .collect();
    tasks.extend(background_tasks(intensity + 1));
    Ok(tasks)
}

/// An interactive task, a batch job and a light logger.
pub fn background_tasks(first_id: u32) -> Vec<TaskSpec> {
    vec![
        TaskSpec {
            name: "interactive".into(),
            producer: ProducerProfile::constant(1),
            behavior: Behavior {
                yield_prob: 0.5,
                sleep_ticks: 3,
            },
            ..TaskSpec::new(first_id)
        },
        TaskSpec {
            name: "batch".into(),
            behavior: Behavior {
                yield_prob: 0.02,
                sleep_ticks: 0,
            },
            ..TaskSpec::new(first_id + 1)
        },
        TaskSpec {
            name: "logger".into(),
            producer: ProducerProfile::constant(2),
            behavior: Behavior {
                yield_prob: 0.2,
                sleep_ticks: 1,
            },
            ..TaskSpec::new(first_id + 2)
        },
    ]
}

const WAVE_STREAM: u64 = 0x7761_7665;

impl SuperProducerSpec {
    pub fn build(&self, scheduler: SchedulerKind, seed: u64) -> Result<ScenarioSpec> {
        let mut tasks = vec![TaskSpec::consumer(0)];
        let mut workload = make_super_producer(self.intensity, self.scan_rate)?;
        if !self.background {
            workload.truncate(self.intensity as usize);
        }
        for t in workload.iter_mut().take(self.intensity as usize) {
            t.arrival = self.start;
        }
        if let Some(wave) = self.stress {
            if wave.period == 0 || wave.demand == 0 {
                return Err(Error::InvalidSpec("stress period and demand must be > 0".into()));
            }
            workload.drain(..self.intensity as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ WAVE_STREAM);
            let mut id = self.intensity + 4;
            for (k, start) in (0..self.duration).step_by(wave.period as usize).enumerate() {
                for j in 0..self.intensity {
                    workload.push(TaskSpec {
                        name: format!("stress-{k}-{j}"),
                        arrival: start + rng.gen_range(0..=wave.jitter),
                        cpu_demand: Some(wave.demand),
                        producer: ProducerProfile::constant(self.scan_rate),
                        ..TaskSpec::new(id)
                    });
                    id += 1;
                }
            }
        }
        tasks.extend(workload);
        let spec = ScenarioSpec {
            tasks,
            cores: self.cores,
            duration: self.duration,
            buffer_capacity: self.buffer_capacity,
            consumer: ConsumerProfile::new(self.drain_per_tick)?,
            scheduler,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn super_producer_scales_linearly() {
        let one = make_super_producer(1, 40).unwrap();
        let five = make_super_producer(5, 40).unwrap();
        let rate = |ts: &[TaskSpec]| -> u64 {
            ts.iter()
                .filter(|t| t.name.starts_with("producer"))
                .map(|t| t.producer.events_at(0, 0))
                .sum()
        };
        assert_eq!(rate(&one), 40);
        assert_eq!(rate(&five), 5 * rate(&one));
        assert!(make_super_producer(0, 40).is_err());
    }

    #[test]
    fn validation_messages_name_the_field() {
        let sp = SuperProducerSpec {
            intensity: 2,
            scan_rate: 8,
            drain_per_tick: 8,
            buffer_capacity: 64,
            duration: 100,
            cores: 1,
            background: true,
            start: 0,
            stress: None,
        };
        let mut spec = sp.build(SchedulerKind::Fifo, 0).unwrap();
        spec.duration = 0;
        assert!(spec.validate().unwrap_err().to_string().contains("scenario.duration"));
        spec.duration = 10;
        spec.tasks.push(TaskSpec::consumer(99));
        assert!(spec.validate().unwrap_err().to_string().contains("exactly one consumer"));
        spec.tasks.pop();
        spec.tasks[1].behavior.yield_prob = 1.5;
        assert!(spec.validate().unwrap_err().to_string().contains("tasks[1].behavior.yield_prob"));
        spec.tasks[1].behavior.yield_prob = 0.0;
        spec.tasks[2].id = spec.tasks[1].id;
        assert!(spec.validate().unwrap_err().to_string().contains("duplicated"));
    }

    #[test]
    fn scheduler_names_round_trip() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("cfs".parse::<SchedulerKind>().is_err());
    }
}
