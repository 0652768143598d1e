use brace_core::belief::InferenceParams;
use brace_core::episode::{run_episode, run_scripted, Arbiter, BeliefInput};
use brace_core::eval::EpisodeMetrics;
use brace_core::geom::Vec2;
use brace_core::neural::PolicyNet;
use brace_session::*;
use futures_util::{SinkExt, StreamExt};
use std::time::Duration;
use tokio_tungstenite::tungstenite::Message;

fn assets(with_policy: bool) -> SessionAssets {
    SessionAssets::new(InferenceParams::default(), with_policy.then(|| PolicyNet::new(11))).unwrap()
}

fn config(condition: SessionCondition) -> SessionConfig {
    SessionConfig {
        env_seed: 42,
        stage: 3,
        condition,
        ..SessionConfig::default()
    }
}

fn input(tick: u64, x: f64, y: f64) -> FrameIn {
    FrameIn {
        tick,
        input: [x, y],
        manual_gamma: None,
    }
}

/// Pilot-sim inputs for the session's environment, as client messages.
fn scripted_inputs(a: &SessionAssets, cfg: &SessionConfig) -> Vec<[f64; 2]> {
    let ctx = a.context();
    let trace = run_episode(&ctx, cfg.spec(), Arbiter::NoAssist).unwrap();
    let v = a.env.config().v_max;
    trace
        .steps
        .iter()
        .map(|s| [(s.human.x / v).clamp(-1.0, 1.0), (s.human.y / v).clamp(-1.0, 1.0)])
        .collect()
}

#[test]
fn no_assist_streams_zero_gamma() {
    let a = assets(false);
    let cfg = config(SessionCondition::NoAssist);
    let ctx = a.context();
    let mut s = Session::new(&cfg, &ctx, None).unwrap();
    for t in 0..50 {
        let f = s.tick(Some(input(t, 0.6, 0.0)), false).unwrap();
        assert_eq!(f.gamma, 0.0);
        assert!((f.belief.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn manual_gamma_passes_through() {
    let a = assets(false);
    let cfg = config(SessionCondition::ManualGamma);
    let ctx = a.context();
    let mut s = Session::new(&cfg, &ctx, None).unwrap();
    let first = FrameIn {
        manual_gamma: Some(0.4),
        ..input(0, 0.5, 0.1)
    };
    assert_eq!(s.tick(Some(first), false).unwrap().gamma, 0.4);
    for _ in 0..30 {
        let f = s.tick(None, false).unwrap();
        if f.status.is_final() {
            break;
        }
        assert_eq!(f.gamma, 0.4);
    }
}

#[test]
fn inputs_are_clamped() {
    let f = FrameIn {
        tick: 0,
        input: [3.0, f64::NAN],
        manual_gamma: Some(-1.0),
    }
    .sanitized();
    assert_eq!(f.input, [1.0, 0.0]);
    assert_eq!(f.manual_gamma, Some(0.0));
}

#[test]
fn stale_input_freezes_assistance() {
    let a = assets(true);
    let cfg = config(SessionCondition::Brace);
    let ctx = a.context();
    let mut s = Session::new(&cfg, &ctx, a.policy.as_ref()).unwrap();
    let live = s.tick(Some(input(0, 0.5, 0.0)), false).unwrap();
    assert!(live.gamma > 0.0 && !live.safety_stale);
    let frozen = s.tick(None, true).unwrap();
    assert_eq!(frozen.gamma, 0.0);
    assert!(frozen.safety_stale);
}

#[test]
fn replaying_a_recorded_stream_reproduces_the_frames() {
    let a = assets(true);
    let cfg = config(SessionCondition::Brace);
    let inputs = scripted_inputs(&a, &cfg);
    let run = || {
        let ctx = a.context();
        let mut s = Session::new(&cfg, &ctx, a.policy.as_ref()).unwrap();
        let mut frames = vec![s.frame(false)];
        for (t, x) in inputs.iter().enumerate() {
            // drop every fifth message to exercise the hold
            let msg = (t % 5 != 4).then(|| input(t as u64, x[0], x[1]));
            frames.push(s.tick(msg, false).unwrap());
            if s.status().is_final() {
                break;
            }
        }
        serde_json::to_string(&frames).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn frames_stay_small_and_records_match_the_episode_schema() {
    let a = assets(true);
    let cfg = config(SessionCondition::Brace);
    let ctx = a.context();
    let mut s = Session::new(&cfg, &ctx, a.policy.as_ref()).unwrap();
    let mut largest = 0;
    for t in 0..400 {
        let f = s.tick(Some(input(t, 0.7, -0.2)), false).unwrap();
        largest = largest.max(serde_json::to_vec(&f).unwrap().len());
        if f.status.is_final() {
            break;
        }
        assert!(f.tail.len() <= cfg.tail_len);
    }
    assert!(largest < 8192, "{largest} bytes");
    let text = serde_json::to_string(&s.record()).unwrap();
    let plain: EpisodeMetrics = serde_json::from_str(&text).unwrap();
    assert_eq!(plain.condition, "brace");
}

#[test]
fn idle_session_compute_is_well_under_the_tick_period() {
    let a = assets(true);
    let cfg = config(SessionCondition::Brace);
    let ctx = a.context();
    let mut s = Session::new(&cfg, &ctx, a.policy.as_ref()).unwrap();
    for t in 0..100 {
        if s.tick(Some(input(t, 0.0, 0.0)), false).unwrap().status.is_final() {
            break;
        }
    }
    let r = latency_report(s.timings(), cfg.tick_rate);
    assert_eq!(r.ticks, s.timings().len());
    assert!(r.total_us.p50 < 0.5 * r.tick_period_us, "{r:?}");
    assert!(r.within_budget(), "{r:?}");
}

#[test]
fn config_rejects_out_of_range_tick_rate() {
    let cfg = SessionConfig {
        tick_rate: 5.0,
        ..SessionConfig::default()
    };
    assert!(cfg.validate().is_err());
    let a = assets(false);
    let ctx = a.context();
    let brace = config(SessionCondition::Brace);
    assert!(Session::new(&brace, &ctx, None).is_err());
}

async fn start(cfg: SessionConfig, a: SessionAssets) -> (std::sync::Arc<ServerState>, String) {
    let state = ServerState::new(cfg, a, None).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}/session", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, state.clone()));
    (state, url)
}

fn text(msg: Message) -> String {
    match msg {
        Message::Text(t) => t.as_str().to_string(),
        other => panic!("unexpected message {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn online_session_matches_offline_evaluation_of_the_same_stream() {
    let cfg = SessionConfig {
        lockstep: true,
        ..config(SessionCondition::Brace)
    };
    let a = assets(true);
    let inputs = scripted_inputs(&a, &cfg);
    let offline = {
        let ctx = a.context();
        let v = a.env.config().v_max;
        let hs: Vec<Vec2> = inputs.iter().map(|x| Vec2::new(x[0] * v, x[1] * v)).collect();
        let arbiter = Arbiter::Policy {
            net: a.policy.as_ref().unwrap(),
            input: BeliefInput::Full,
            explore: None,
        };
        run_scripted(&ctx, cfg.spec(), arbiter, &hs).unwrap()
    };

    let (state, url) = start(cfg, a).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let hello: Handshake = serde_json::from_str(&text(ws.next().await.unwrap().unwrap())).unwrap();
    assert_eq!(hello.schema_version, SCHEMA_VERSION);
    let mut last: FrameOut = serde_json::from_str(&text(ws.next().await.unwrap().unwrap())).unwrap();
    while !last.status.is_final() {
        let x = inputs.get(last.tick as usize).or(inputs.last()).unwrap();
        let msg = serde_json::to_string(&input(last.tick, x[0], x[1])).unwrap();
        ws.send(Message::Text(msg.into())).await.unwrap();
        last = serde_json::from_str(&text(ws.next().await.unwrap().unwrap())).unwrap();
    }
    assert_eq!(last.cursor, [offline.final_cursor.x, offline.final_cursor.y]);
    assert_eq!(last.tick as usize, offline.steps.len());
    assert_eq!(last.status == TrialStatus::Success, offline.success());
    let gammas: Vec<f64> = offline.steps.iter().map(|s| s.gamma).collect();
    assert_eq!(last.gamma, *gammas.last().unwrap());

    for _ in 0..200 {
        if !state.completed.lock().unwrap().is_empty() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let records = state.completed.lock().unwrap();
    assert_eq!(records.len(), 1);
    assert!(!records[0].aborted);
    assert_eq!(records[0].metrics.steps_to_complete, offline.steps.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_keeps_a_partial_aborted_record() {
    let cfg = SessionConfig {
        lockstep: true,
        ..config(SessionCondition::NoAssist)
    };
    let (state, url) = start(cfg, assets(false)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    ws.next().await.unwrap().unwrap();
    for t in 0..5u64 {
        ws.next().await.unwrap().unwrap();
        let msg = serde_json::to_string(&input(t, 0.5, 0.0)).unwrap();
        ws.send(Message::Text(msg.into())).await.unwrap();
    }
    ws.close(None).await.unwrap();
    drop(ws);
    for _ in 0..300 {
        if !state.completed.lock().unwrap().is_empty() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let records = state.completed.lock().unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].aborted);
    assert!(records[0].ticks >= 4);
}
