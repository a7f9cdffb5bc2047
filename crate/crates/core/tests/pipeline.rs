use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use dreamflow::generator::{GeneratedImage, GenerationRequest, Generator, GeneratorError, GeneratorKind, StubGenerator, ViewContext};
use dreamflow::pipeline::work::{segment_seed, weave_job_id};
use dreamflow::pipeline::*;
use dreamflow::prompts::reference_batch;
use dreamflow::scene::{HurdleParams, TerrainSpec};

fn small_config(count: usize, steps: usize) -> TaskConfig {
    let mut cfg = TaskConfig::default();
    cfg.camera.width = 48;
    cfg.camera.height = 27;
    cfg.trajectories.count = count;
    cfg.trajectories.steps = steps;
    cfg.workers.lease_s = 2.0;
    cfg
}

fn stub() -> Arc<dyn Generator> {
    Arc::new(StubGenerator::default())
}

#[test]
fn enqueue_dequeue_round_trip() {
    let b = MemoryBroker::new(5);
    let env = JobEnvelope::new(JobKind::Weave, b"payload".to_vec());
    b.enqueue(WEAVE_QUEUE, env.clone()).unwrap();
    let got = b.dequeue(WEAVE_QUEUE, "w", Duration::from_secs(5), Duration::ZERO).unwrap().unwrap();
    assert_eq!(got.payload, env.payload);
    assert_eq!(got.attempt, 1);
    assert_eq!(got.job_id, env.job_id);
}

#[test]
fn unacked_job_is_redelivered_after_lease() {
    let b = MemoryBroker::new(5);
    let env = JobEnvelope::new(JobKind::Weave, vec![1, 2, 3]);
    b.enqueue(WEAVE_QUEUE, env.clone()).unwrap();
    let lease = Duration::from_millis(100);
    let first = b.dequeue(WEAVE_QUEUE, "a", lease, Duration::ZERO).unwrap().unwrap();
    assert_eq!(first.attempt, 1);
    assert!(b.dequeue(WEAVE_QUEUE, "b", lease, Duration::from_millis(20)).unwrap().is_none());
    let second = b.dequeue(WEAVE_QUEUE, "b", lease, Duration::from_millis(500)).unwrap().unwrap();
    assert_eq!(second.job_id, env.job_id);
    assert_eq!(second.attempt, 2);
    assert_eq!(b.ack(WEAVE_QUEUE, &env.job_id).unwrap(), AckOutcome::Acked);
    assert_eq!(b.ack(WEAVE_QUEUE, &env.job_id).unwrap(), AckOutcome::Unknown);
    let s = b.stats(WEAVE_QUEUE).unwrap();
    assert_eq!((s.acked, s.redelivered, s.parked), (1, 1, 0));
    assert!(s.drained());
}

#[test]
fn poison_job_is_parked_not_acked() {
    let b = MemoryBroker::new(2);
    let env = JobEnvelope::new(JobKind::Weave, vec![]);
    b.enqueue(WEAVE_QUEUE, env.clone()).unwrap();
    let lease = Duration::from_millis(30);
    for attempt in 1..=2 {
        let got = b.dequeue(WEAVE_QUEUE, "w", lease, Duration::from_millis(300)).unwrap().unwrap();
        assert_eq!(got.attempt, attempt);
    }
    thread::sleep(Duration::from_millis(60));
    assert!(b.dequeue(WEAVE_QUEUE, "w", lease, Duration::from_millis(50)).unwrap().is_none());
    let s = b.stats(WEAVE_QUEUE).unwrap();
    assert_eq!((s.parked, s.acked), (1, 0));
    assert_eq!(b.parked(WEAVE_QUEUE).unwrap()[0].job_id, env.job_id);
    assert_eq!(b.ack(WEAVE_QUEUE, &env.job_id).unwrap(), AckOutcome::Unknown);
    assert_eq!(b.stats(WEAVE_QUEUE).unwrap().acked, 0);
}

#[test]
fn idle_weaver_polls_an_empty_queue() {
    let broker = MemoryBroker::new(5);
    let store = MemStore::new();
    let generator = StubGenerator::default();
    let stats = WeaverStats::default();
    let stop = Arc::new(AtomicBool::new(false));
    let stopper = {
        let stop = stop.clone();
        thread::spawn(move || {
            thread::sleep(Duration::from_millis(300));
            stop.store(true, std::sync::atomic::Ordering::Relaxed);
        })
    };
    let mut opts = WeaverOptions::new("idle", Duration::from_secs(1));
    opts.poll = Duration::from_millis(20);
    assert_eq!(run_weaver(&broker, &generator, &store, &opts, &stats, &stop), WorkerExit::Stopped);
    stopper.join().unwrap();
    assert!(store.is_empty());
    assert_eq!(stats.failures.load(std::sync::atomic::Ordering::Relaxed), 0);
}

#[test]
fn hundred_jobs_four_workers() {
    let cfg = small_config(100, 7);
    let broker = Arc::new(MemoryBroker::new(5));
    let store = Arc::new(MemStore::new());
    let report = run_offline_batch(
        &cfg,
        &reference_batch().pairs,
        broker.clone(),
        store.clone(),
        &OfflineOptions::with_generator(stub()),
    )
    .unwrap();
    assert_eq!(report.weave_jobs, 100);
    assert_eq!(report.stacks, 100);
    assert!(report.complete(), "{report:?}");
    let s = broker.stats(WEAVE_QUEUE).unwrap();
    assert_eq!((s.enqueued, s.acked, s.parked, s.redelivered), (100, 100, 0, 0));
    let keyframes = store.keys().unwrap().into_iter().filter(|k| k.namespace.artifact == "keyframe").count();
    assert_eq!(keyframes, 100);
}

#[test]
fn offline_segment_arithmetic_and_idempotent_rerun() {
    let cfg = small_config(10, 14);
    let broker = Arc::new(MemoryBroker::new(5));
    let store = Arc::new(MemStore::new());
    let prompts = reference_batch().pairs;
    let opts = OfflineOptions::with_generator(stub());
    let report = run_offline_batch(&cfg, &prompts, broker.clone(), store.clone(), &opts).unwrap();
    assert_eq!((report.weave_jobs, report.stacks), (20, 20));
    assert!(report.hole_fraction >= 0.0 && report.hole_fraction < 0.5);
    let digest = store.content_digest().unwrap();

    // a second pass over the same store changes nothing
    let again = run_offline_batch(&cfg, &prompts, Arc::new(MemoryBroker::new(5)), store.clone(), &opts).unwrap();
    assert_eq!(again.stacks, 20);
    assert_eq!(store.content_digest().unwrap(), digest);
}

#[test]
fn zero_trajectories_is_an_empty_success() {
    let cfg = small_config(0, 14);
    let report = run_offline_batch(
        &cfg,
        &[],
        Arc::new(MemoryBroker::new(5)),
        Arc::new(MemStore::new()),
        &OfflineOptions::with_generator(stub()),
    )
    .unwrap();
    assert_eq!((report.trajectories, report.weave_jobs, report.stacks), (0, 0, 0));
    assert!(report.complete());
}

#[test]
fn killed_workers_leave_the_same_store() {
    let mut cfg = small_config(12, 14);
    cfg.workers.lease_s = 0.3;
    let prompts = reference_batch().pairs;

    let clean = Arc::new(MemStore::new());
    run_offline_batch(&cfg, &prompts, Arc::new(MemoryBroker::new(5)), clean.clone(), &OfflineOptions::with_generator(stub()))
        .unwrap();

    let faulty = Arc::new(MemStore::new());
    let broker = Arc::new(MemoryBroker::new(5));
    let mut opts = OfflineOptions::with_generator(stub());
    opts.faults = FaultPlan::random(0.4, 11);
    let report = run_offline_batch(&cfg, &prompts, broker.clone(), faulty.clone(), &opts).unwrap();
    assert!(report.complete(), "{report:?}");
    assert!(broker.stats(WEAVE_QUEUE).unwrap().redelivered > 0, "the fault plan should have killed someone");
    assert_eq!(faulty.content_digest().unwrap(), clean.content_digest().unwrap());
    assert_eq!(faulty.keys().unwrap(), clean.keys().unwrap());
}

#[test]
fn offline_over_tcp_and_fs_store() {
    let server = BrokerServer::bind("127.0.0.1:0", Arc::new(MemoryBroker::new(5))).unwrap();
    let broker: Arc<dyn Broker> = Arc::new(TcpBroker::connect(server.local_addr().to_string()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(FsStore::open(dir.path()).unwrap());
    let cfg = small_config(2, 9);
    let report =
        run_offline_batch(&cfg, &reference_batch().pairs, broker, store.clone(), &OfflineOptions::with_generator(stub()))
            .unwrap();
    assert_eq!(report.stacks, 4);
    let stacks: Vec<_> = store.keys().unwrap().into_iter().filter(|k| k.namespace.artifact == "stack").collect();
    assert_eq!(stacks.len(), 4);
    let dir = store.entry_path(&stacks[0]);
    let stack = dreamflow::FrameStack::read_dir(&dir).unwrap();
    assert_eq!(stack.len(), 7);
    assert_eq!(stack.frames[0].width(), 48);
}

#[test]
fn downsizing_only_touches_stacks() {
    let mut cfg = small_config(1, 7);
    cfg.downsize_width = Some(24);
    let store = Arc::new(MemStore::new());
    run_offline_batch(
        &cfg,
        &reference_batch().pairs,
        Arc::new(MemoryBroker::new(5)),
        store.clone(),
        &OfflineOptions::with_generator(stub()),
    )
    .unwrap();
    for key in store.keys().unwrap() {
        let files = store.get(&key).unwrap().unwrap();
        let png = files.iter().find(|(n, _)| n.ends_with(".png")).map(|(_, b)| image::load_from_memory(b).unwrap());
        if let Some(img) = png {
            let expect = if key.namespace.artifact == "stack" { 24 } else { 48 };
            assert_eq!(img.width(), expect, "{key}");
        }
    }
}

fn request(seed: u64) -> (GenerationRequest, ViewContext) {
    let cfg = small_config(1, 1);
    let k = cfg.camera.intrinsics().unwrap();
    let scene = dreamflow::build_terrain(&cfg.terrain).unwrap();
    let t = ScriptedTrajectory { id: "r".into(), start: [0.2, 0.0], yaw: 0.0, speed: 0.5, yaw_rate: 0.0, steps: 1 };
    let pose = t.poses(&scene, &cfg.camera)[0];
    let (depth, labels) = dreamflow::raycast(&scene, &k, &pose, 0.05, 20.0).unwrap();
    let clipped = dreamflow::clip_depth(&depth, 0.28, 5.0).unwrap();
    let pair = &reference_batch().pairs[0];
    let req = dreamflow::generator::build_request(&clipped, &labels, &cfg.terrain.labels, pair, 0.8, 6, seed);
    (req, ViewContext { terrain: cfg.terrain, pose, intrinsics: k })
}

#[test]
fn rpc_reply_matches_direct_call() {
    let broker: Arc<dyn Broker> = Arc::new(MemoryBroker::new(5));
    let _weavers = RpcWeavers::spawn(1, broker.clone(), stub());
    let client = RpcClient::new(broker);
    let (req, view) = request(5);
    let got = client.call(&req, Some(&view), Duration::from_secs(10)).unwrap();
    let direct = StubGenerator::default().generate(&req, Some(&view)).unwrap();
    assert_eq!(got.rgb, direct.rgb);
    assert_eq!(got.request_digest, req.digest());
}

#[test]
fn concurrent_callers_get_their_own_images() {
    let broker: Arc<dyn Broker> = Arc::new(MemoryBroker::new(5));
    let _weavers = RpcWeavers::spawn(2, broker.clone(), stub());
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = (0..2u64)
        .map(|c| {
            let (broker, barrier) = (broker.clone(), barrier.clone());
            thread::spawn(move || {
                let client = RpcClient::new(broker);
                barrier.wait();
                for i in 0..10 {
                    let (req, view) = request(c * 100 + i);
                    let got = client.call(&req, Some(&view), Duration::from_secs(10)).unwrap();
                    assert_eq!(got.request_digest, req.digest());
                    assert_eq!(got.rgb, StubGenerator::default().generate(&req, Some(&view)).unwrap().rgb);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn rpc_without_weavers_times_out_at_the_deadline() {
    let broker: Arc<dyn Broker> = Arc::new(MemoryBroker::new(5));
    let client = RpcClient::new(broker.clone());
    let (req, _) = request(1);
    let start = Instant::now();
    let err = client.call(&req, None, Duration::from_millis(300)).unwrap_err();
    let elapsed = start.elapsed();
    assert!(matches!(err, RpcError::Timeout(_)), "{err}");
    assert!(elapsed >= Duration::from_millis(295) && elapsed < Duration::from_millis(600), "{elapsed:?}");

    // a weaver that starts late drops the expired request
    assert_eq!(broker.stats(RPC_QUEUE).unwrap().ready, 1);
    assert!(serve_one(&*broker, &StubGenerator::default(), "late", Duration::ZERO).unwrap());
    assert_eq!(broker.stats(client.reply_queue()).unwrap().enqueued, 0);
}

/// Stalls on one chosen seed, so exactly one segment misses its deadline.
struct StallOn {
    seed: u64,
    stall: Duration,
}

impl Generator for StallOn {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Stub
    }

    fn generate(&self, r: &GenerationRequest, v: Option<&ViewContext>) -> Result<GeneratedImage, GeneratorError> {
        if r.seed == self.seed {
            thread::sleep(self.stall);
        }
        StubGenerator::default().generate(r, v)
    }
}

fn onpolicy_config(steps: usize) -> TaskConfig {
    let mut cfg = small_config(1, steps);
    cfg.workers.unroll_workers = 1;
    cfg.workers.rpc_deadline_s = 5.0;
    cfg
}

#[test]
fn onpolicy_segments() {
    let broker: Arc<dyn Broker> = Arc::new(MemoryBroker::new(5));
    let _weavers = RpcWeavers::spawn(2, broker.clone(), stub());
    let prompts = reference_batch().pairs;

    let store = Arc::new(MemStore::new());
    let r = run_onpolicy_loop(&onpolicy_config(21), &prompts, broker.clone(), store.clone()).unwrap();
    assert_eq!((r.rpc_calls, r.stacks), (3, 3));
    assert_eq!(r.flagged().count(), 0);

    let store = Arc::new(MemStore::new());
    let r = run_onpolicy_loop(&onpolicy_config(1), &prompts, broker, store.clone()).unwrap();
    assert_eq!((r.rpc_calls, r.stacks), (1, 1));
    let key = store.keys().unwrap().into_iter().find(|k| k.namespace.artifact == "stack").unwrap();
    let files = store.get(&key).unwrap().unwrap();
    assert!(files.contains_key("frame_00.png") && !files.contains_key("frame_01.png"));
}

#[test]
fn onpolicy_timeout_flags_one_segment() {
    let mut cfg = onpolicy_config(21);
    cfg.workers.rpc_deadline_s = 0.5;
    let traj = sample_trajectories(&cfg.trajectories).remove(0);
    let stall = StallOn { seed: segment_seed(cfg.generation.seed, &traj.id, 1), stall: Duration::from_millis(900) };
    let broker: Arc<dyn Broker> = Arc::new(MemoryBroker::new(5));
    let _weavers = RpcWeavers::spawn(1, broker.clone(), Arc::new(stall));
    let store = Arc::new(MemStore::new());
    let r = run_onpolicy_loop(&cfg, &reference_batch().pairs, broker, store.clone()).unwrap();
    assert_eq!(r.rpc_calls, 3);
    assert_eq!(r.stacks, 2);
    let flagged: Vec<_> = r.flagged().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!((flagged[0].segment, &flagged[0].status), (1, &SegmentStatus::TimedOut));
    let stacks: Vec<u32> = store
        .keys()
        .unwrap()
        .into_iter()
        .filter(|k| k.namespace.artifact == "stack")
        .map(|k| k.namespace.stack_index.unwrap())
        .collect();
    assert_eq!(stacks, vec![0, 2]);
}

#[test]
fn weave_job_count_invariant() {
    for (t, n) in [(1, 1), (7, 1), (20, 3), (600, 86)] {
        assert_eq!(segment_count(t), n);
    }
    assert_eq!(weave_job_id("stairs", "traj-00001", 3), "weave-stairs-traj-00001-0003");
}

#[test]
fn hurdles_task_runs_too() {
    let mut cfg = small_config(2, 7);
    cfg.task = "hurdles".into();
    cfg.terrain = TerrainSpec::hurdles(HurdleParams::default());
    let store = Arc::new(MemStore::new());
    let r = run_offline_batch(
        &cfg,
        &reference_batch().pairs,
        Arc::new(MemoryBroker::new(5)),
        store.clone(),
        &OfflineOptions::with_generator(stub()),
    )
    .unwrap();
    assert_eq!(r.stacks, 2, "{r:?}");
    assert!(store.keys().unwrap().iter().all(|k| k.namespace.task == "hurdles" && k.namespace.scene == "hurdles"));
}
