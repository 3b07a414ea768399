use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::Serialize;

use super::cycles::{CycleReport, DEFAULT_CLOCK_MHZ};
use super::fifo::Fifo;
use super::graph::{Endpoint, StageGraph};
use crate::stream::{CycleModel, Element, Emitter, Kernel, KernelStats, PixelStream};
use crate::{EngineError, KernelError};

/// Accepted input elements per scheduling step of one stage.
const STEP_BUDGET: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Concurrent workers; 0 picks the available parallelism.
    pub workers: usize,
    pub cycle: CycleModel,
    pub clock_mhz: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            cycle: CycleModel::default(),
            clock_mhz: DEFAULT_CLOCK_MHZ,
        }
    }
}

/// Occupancy counters of one FIFO. `peak` depends on how stages were
/// interleaved; the other fields do not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeReport {
    pub from: String,
    pub to: String,
    pub skip: bool,
    pub capacity: usize,
    pub element_bits: u32,
    pub pushed: u64,
    pub popped: u64,
    pub peak: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: PixelStream,
    pub cycles: CycleReport,
    pub fifos: Vec<EdgeReport>,
}

/// Emits the whole input image at cycle 0.
struct SourceKernel {
    data: Vec<i32>,
}

impl Kernel for SourceKernel {
    fn out_ports(&self) -> usize {
        1
    }

    fn next_port(&self) -> Option<usize> {
        None
    }

    fn start(&mut self, out: &mut Emitter) -> Result<(), KernelError> {
        for v in self.data.drain(..) {
            out.emit(0, v, 0);
        }
        Ok(())
    }

    fn accept(&mut self, _: usize, _: Element, _: &mut Emitter) -> Result<(), KernelError> {
        Err(KernelError::Exhausted)
    }

    fn stats(&self) -> KernelStats {
        KernelStats::default()
    }
}

/// Collects the network output.
struct SinkKernel {
    expected: usize,
    values: Arc<Mutex<Vec<i32>>>,
    taken: usize,
}

impl Kernel for SinkKernel {
    fn out_ports(&self) -> usize {
        0
    }

    fn next_port(&self) -> Option<usize> {
        (self.taken < self.expected).then_some(0)
    }

    fn start(&mut self, _: &mut Emitter) -> Result<(), KernelError> {
        Ok(())
    }

    fn accept(&mut self, _: usize, e: Element, _: &mut Emitter) -> Result<(), KernelError> {
        self.values.lock().expect("sink lock").push(e.value);
        self.taken += 1;
        Ok(())
    }

    fn stats(&self) -> KernelStats {
        KernelStats::default()
    }
}

struct Runner {
    name: String,
    kernel: Box<dyn Kernel>,
    out: Emitter,
    started: bool,
    /// Fan-out edges of the front element already written.
    cursor: usize,
    inputs: Vec<Option<usize>>,
    outputs: Vec<Vec<(usize, u64)>>,
}

enum Step {
    Progress,
    Blocked,
    Done,
}

impl Runner {
    /// Pushes pending output, returning false when a FIFO is full.
    fn flush(&mut self, fifos: &[Fifo], moved: &mut bool) -> bool {
        while let Some(&(port, e)) = self.out.front() {
            let targets = &self.outputs[port];
            while self.cursor < targets.len() {
                let (fifo, latency) = targets[self.cursor];
                let delayed = Element {
                    value: e.value,
                    ts: e.ts + latency,
                };
                if !fifos[fifo].try_push(delayed) {
                    return false;
                }
                self.cursor += 1;
                *moved = true;
            }
            self.out.pop();
            self.cursor = 0;
        }
        true
    }

    fn step(&mut self, fifos: &[Fifo]) -> Result<Step, EngineError> {
        let wrap = |name: &str, source| EngineError::Kernel {
            stage: name.to_string(),
            source,
        };
        let mut moved = false;
        if !self.started {
            self.kernel.start(&mut self.out).map_err(|e| wrap(&self.name, e))?;
            self.started = true;
            moved = true;
        }
        for _ in 0..STEP_BUDGET {
            if !self.flush(fifos, &mut moved) {
                break;
            }
            let Some(port) = self.kernel.next_port() else {
                return Ok(Step::Done);
            };
            let fifo = self.inputs.get(port).copied().flatten().ok_or_else(|| {
                EngineError::Fifo(format!("{} reads unconnected port {port}", self.name))
            })?;
            let Some(e) = fifos[fifo].try_pop() else {
                break;
            };
            moved = true;
            self.kernel.accept(port, e, &mut self.out).map_err(|err| wrap(&self.name, err))?;
        }
        Ok(if moved { Step::Progress } else { Step::Blocked })
    }
}

#[derive(Default)]
struct Quiesce {
    epoch: u64,
    idle: usize,
    finished: bool,
    error: Option<EngineError>,
}

struct Shared {
    runners: Vec<Mutex<Runner>>,
    done: Vec<AtomicBool>,
    remaining: AtomicUsize,
    fifos: Vec<Fifo>,
    state: Mutex<Quiesce>,
    wake: Condvar,
    workers: usize,
}

impl Shared {
    fn finish(&self, error: Option<EngineError>) {
        let mut s = self.state.lock().expect("state lock");
        if !s.finished {
            s.finished = true;
            s.error = error;
        }
        self.wake.notify_all();
    }

    fn blocked(&self) -> Vec<String> {
        self.runners
            .iter()
            .zip(&self.done)
            .filter(|(_, d)| !d.load(Ordering::Acquire))
            .map(|(r, _)| r.lock().expect("runner lock").name.clone())
            .collect()
    }

    fn work(&self, id: usize) {
        let n = self.runners.len();
        loop {
            let seen = {
                let s = self.state.lock().expect("state lock");
                if s.finished {
                    return;
                }
                s.epoch
            };
            let mut progressed = false;
            for j in 0..n {
                let i = (id + j) % n;
                if self.done[i].load(Ordering::Acquire) {
                    continue;
                }
                let Ok(mut runner) = self.runners[i].try_lock() else {
                    continue;
                };
                match runner.step(&self.fifos) {
                    Ok(Step::Progress) => progressed = true,
                    Ok(Step::Blocked) => {}
                    Ok(Step::Done) => {
                        progressed = true;
                        self.done[i].store(true, Ordering::Release);
                        if self.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
                            self.finish(None);
                            return;
                        }
                    }
                    Err(e) => {
                        self.finish(Some(e));
                        return;
                    }
                }
            }
            let mut s = self.state.lock().expect("state lock");
            if progressed {
                s.epoch += 1;
                self.wake.notify_all();
                continue;
            }
            if s.finished || s.epoch != seen {
                continue;
            }
            s.idle += 1;
            if s.idle == self.workers {
                drop(s);
                let blocked = self.blocked();
                self.finish(Some(EngineError::Deadlock { blocked }));
                return;
            }
            while !s.finished && s.epoch == seen {
                s = self.wake.wait(s).expect("state lock");
            }
            s.idle -= 1;
        }
    }
}

/// Streams `image` through the pipeline. Output values and cycle accounting
/// do not depend on the number of workers or on thread interleaving.
pub fn run(graph: &StageGraph, image: &PixelStream, opts: &RunOptions) -> Result<RunResult, EngineError> {
    let topo = &graph.topology;
    if image.shape() != topo.input.shape || image.kind() != topo.input.kind {
        return Err(EngineError::Input(format!(
            "expected {} {}, got {} {}",
            topo.input.shape,
            topo.input.kind,
            image.shape(),
            image.kind()
        )));
    }
    let stages = topo.stages.len();
    let (source, sink) = (stages, stages + 1);
    let runner_of = |ep: Endpoint| match ep {
        Endpoint::Stage { stage, port } => (stage, port),
        Endpoint::Source => (source, 0),
        Endpoint::Sink => (sink, 0),
    };
    let sink_values = Arc::new(Mutex::new(Vec::with_capacity(topo.output.shape.len())));
    let mut runners = Vec::with_capacity(stages + 2);
    for i in 0..stages {
        let kernel = graph.instantiate(i, opts.cycle)?;
        let ports = kernel.out_ports();
        runners.push(Runner {
            name: topo.stages[i].name.clone(),
            kernel,
            out: Emitter::new(),
            started: false,
            cursor: 0,
            inputs: vec![None; topo.stages[i].inputs.len()],
            outputs: vec![Vec::new(); ports],
        });
    }
    let plain = |name: &str, kernel: Box<dyn Kernel>, inputs: usize, outputs: usize| Runner {
        name: name.to_string(),
        kernel,
        out: Emitter::new(),
        started: false,
        cursor: 0,
        inputs: vec![None; inputs],
        outputs: vec![Vec::new(); outputs],
    };
    runners.push(plain(
        "input",
        Box::new(SourceKernel {
            data: image.data().to_vec(),
        }),
        0,
        1,
    ));
    runners.push(plain(
        "output",
        Box::new(SinkKernel {
            expected: topo.output.shape.len(),
            values: sink_values.clone(),
            taken: 0,
        }),
        1,
        0,
    ));
    let mut fifos = Vec::with_capacity(topo.edges.len());
    for (id, edge) in topo.edges.iter().enumerate() {
        let (from, from_port) = runner_of(edge.from);
        let (to, to_port) = runner_of(edge.to);
        let outs = runners[from]
            .outputs
            .get_mut(from_port)
            .ok_or_else(|| EngineError::Graph(format!("edge {id} leaves a missing port")))?;
        outs.push((id, edge.latency));
        let slot = runners[to]
            .inputs
            .get_mut(to_port)
            .ok_or_else(|| EngineError::Graph(format!("edge {id} enters a missing port")))?;
        if slot.replace(id).is_some() {
            return Err(EngineError::Graph(format!("port {to_port} of {} has two producers", runners[to].name)));
        }
        fifos.push(Fifo::new(edge.capacity, edge.ty.kind.bits()));
    }
    if let Some(r) = runners.iter().find(|r| r.inputs.iter().any(Option::is_none)) {
        return Err(EngineError::Graph(format!("{} has an unconnected input", r.name)));
    }

    let workers = match opts.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(runners.len());
    let shared = Shared {
        done: runners.iter().map(|_| AtomicBool::new(false)).collect(),
        remaining: AtomicUsize::new(runners.len()),
        runners: runners.into_iter().map(Mutex::new).collect(),
        fifos,
        state: Mutex::new(Quiesce::default()),
        wake: Condvar::new(),
        workers,
    };
    if workers == 1 {
        shared.work(0);
    } else {
        std::thread::scope(|scope| {
            for id in 0..workers {
                let shared = &shared;
                scope.spawn(move || shared.work(id));
            }
        });
    }
    if let Some(e) = shared.state.into_inner().expect("state lock").error {
        return Err(e);
    }

    let mut stats = Vec::with_capacity(stages);
    for runner in shared.runners.iter().take(stages) {
        let r = runner.lock().expect("runner lock");
        let mut s = r.kernel.stats();
        r.out.annotate(&mut s);
        stats.push(s);
    }
    let fifos = topo
        .edges
        .iter()
        .zip(&shared.fifos)
        .map(|(edge, fifo)| {
            let f = fifo.stats();
            EdgeReport {
                from: topo.endpoint_name(edge.from).to_string(),
                to: topo.endpoint_name(edge.to).to_string(),
                skip: edge.skip,
                capacity: f.capacity,
                element_bits: f.element_bits,
                pushed: f.pushed,
                popped: f.popped,
                peak: f.peak,
            }
        })
        .collect();
    let values = std::mem::take(&mut *sink_values.lock().expect("sink lock"));
    let output = PixelStream::new(topo.output.shape, topo.output.kind, values)
        .map_err(|source| EngineError::Kernel {
            stage: "output".into(),
            source,
        })?;
    Ok(RunResult {
        output,
        cycles: CycleReport::from_stats(topo, &stats, opts.cycle, opts.clock_mhz),
        fifos,
    })
}
