mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use common::*;
use lazydagger_core::env::{EnvAction, EnvState};
use lazydagger_core::meta::{run_lazydagger, Mode, NoObserver, Supervisor, SupervisorError, SupervisorQuery};
use lazydagger_core::metrics::summarize;
use lazydagger_intervention::client::health;
use lazydagger_intervention::protocol::{encode, read_message, ErrorCode, Hello, Message, UpdateKind};
use lazydagger_intervention::{serve, ConsoleClient, InterventionError, Phase, RemoteSupervisor};

fn ask(sup: &mut RemoteSupervisor, t: usize) -> Result<EnvAction, SupervisorError> {
    let state = EnvState(vec![0.1, 0.2, 0.0, 0.0]);
    let robot = EnvAction(vec![0.5, -0.5]);
    sup.query(&SupervisorQuery {
        episode: 0,
        t,
        state: &state,
        robot_action: &robot,
    })
}

fn rejection(result: Result<(ConsoleClient, impl Sized), InterventionError>) -> ErrorCode {
    match result {
        Err(InterventionError::Rejected { code, .. }) => code,
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("connection was accepted"),
    }
}

#[test]
fn starts_and_stops_without_a_console() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let h = health(service.local_addr()).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.sessions.len(), 1);
    assert_eq!(h.sessions[0].phase, Phase::Idle);
    assert!(!h.sessions[0].console_connected);
    service.shutdown();
}

#[test]
fn bind_failures_and_duplicate_sessions_are_errors() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let taken = service.local_addr().to_string();
    assert!(matches!(
        serve(&taken, session("b", env.as_ref())),
        Err(InterventionError::Bind { .. })
    ));
    assert!(matches!(
        service.open_session(session("a", env.as_ref())),
        Err(InterventionError::DuplicateSession(_))
    ));
    service.open_session(session("b", env.as_ref())).unwrap();
    assert_eq!(health(service.local_addr()).unwrap().sessions.len(), 2);
}

#[test]
fn bad_tokens_unknown_sessions_and_second_consoles_are_refused() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let addr = service.local_addr();
    assert_eq!(rejection(ConsoleClient::connect(addr, "a", "wrong")), ErrorCode::BadToken);
    assert_eq!(rejection(ConsoleClient::connect(addr, "zzz", TOKEN)), ErrorCode::UnknownSession);
    let (first, _) = ConsoleClient::connect(addr, "a", TOKEN).unwrap();
    assert_eq!(rejection(ConsoleClient::connect(addr, "a", TOKEN)), ErrorCode::SessionBusy);
    assert!(health(addr).unwrap().sessions[0].console_connected);
    first.close();
    wait_until("console slot to free", || !health(addr).unwrap().sessions[0].console_connected);
    ConsoleClient::connect(addr, "a", TOKEN).unwrap();
}

#[test]
fn first_message_must_be_a_current_hello() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();

    let mut s = TcpStream::connect(service.local_addr()).unwrap();
    s.write_all(&encode(&Message::error(ErrorCode::Malformed, "hi")).unwrap()).unwrap();
    match read_message(&mut s).unwrap() {
        Message::Error(e) => assert_eq!(e.code, ErrorCode::ExpectedHello),
        other => panic!("{other:?}"),
    }

    let body = serde_json::to_vec(&serde_json::json!({
        "protocol": 2, "type": "hello", "session_id": "a", "token": TOKEN
    }))
    .unwrap();
    let mut s = TcpStream::connect(service.local_addr()).unwrap();
    s.write_all(&(body.len() as u32).to_be_bytes()).unwrap();
    s.write_all(&body).unwrap();
    let mut len = [0u8; 4];
    s.read_exact(&mut len).unwrap();
    let mut reply = vec![0u8; u32::from_be_bytes(len) as usize];
    s.read_exact(&mut reply).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&reply).unwrap();
    assert_eq!(v["code"], "version_mismatch");
}

#[test]
fn health_tracks_the_phase_and_unknown_paths_404() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let addr = service.local_addr();
    let mut sup = service.supervisor("a").unwrap();
    let waiting = thread::spawn(move || ask(&mut sup, 0));
    wait_until("awaiting_human", || {
        health(addr).unwrap().sessions[0].phase == Phase::AwaitingHuman
    });
    let (mut console, resync) = ConsoleClient::connect(addr, "a", TOKEN).unwrap();
    assert_eq!(resync.phase, Phase::AwaitingHuman);
    console.send_action(0, EnvAction(vec![0.0, 0.0])).unwrap();
    waiting.join().unwrap().unwrap();
    assert_eq!(health(addr).unwrap().sessions[0].phase, Phase::AutonomousStreaming);

    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(b"GET /nope HTTP/1.1\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 404"), "{text}");
}

#[test]
fn reconnecting_console_gets_resync_with_the_pending_request() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let addr = service.local_addr();
    let (mut first, _) = ConsoleClient::connect(addr, "a", TOKEN).unwrap();
    let mut sup = service.supervisor("a").unwrap();
    let waiting = thread::spawn(move || ask(&mut sup, 7));
    match first.recv().unwrap() {
        Message::RequestIntervention(r) => assert_eq!(r.t, 7),
        other => panic!("{other:?}"),
    }
    first.close();
    // Without a console the query fails rather than hanging.
    assert!(matches!(waiting.join().unwrap(), Err(SupervisorError::Disconnected(_))));

    let mut sup = service.supervisor("a").unwrap();
    let waiting = thread::spawn(move || ask(&mut sup, 8));
    wait_until("request", || service.health().sessions[0].phase == Phase::AwaitingHuman);
    let (mut second, resync) = ConsoleClient::connect(addr, "a", TOKEN).unwrap();
    let pending = resync.pending.expect("resync carries the open request");
    assert_eq!(pending.t, 8);
    assert_eq!(pending.robot_action, EnvAction(vec![0.5, -0.5]));
    second.send_action(8, EnvAction(vec![0.25, 0.0])).unwrap();
    assert_eq!(waiting.join().unwrap().unwrap(), EnvAction(vec![0.25, 0.0]));
}

#[test]
fn stale_answers_get_an_error_and_the_request_again() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let (mut console, _) = ConsoleClient::connect(service.local_addr(), "a", TOKEN).unwrap();
    console.send_action(3, EnvAction(vec![0.0, 0.0])).unwrap();
    match console.recv().unwrap() {
        Message::Error(e) => assert_eq!(e.code, ErrorCode::NoOutstandingRequest),
        other => panic!("{other:?}"),
    }

    let mut sup = service.supervisor("a").unwrap();
    let waiting = thread::spawn(move || ask(&mut sup, 4));
    assert!(matches!(console.recv().unwrap(), Message::RequestIntervention(r) if r.t == 4));
    console.send_action(3, EnvAction(vec![0.1, 0.1])).unwrap();
    match console.recv().unwrap() {
        Message::Error(e) => assert_eq!(e.code, ErrorCode::StaleTimestep),
        other => panic!("{other:?}"),
    }
    assert!(matches!(console.recv().unwrap(), Message::RequestIntervention(r) if r.t == 4));
    console.send_action(4, EnvAction(vec![0.2, 0.2])).unwrap();
    assert_eq!(waiting.join().unwrap().unwrap(), EnvAction(vec![0.2, 0.2]));
}

#[test]
fn human_actions_are_clipped_to_the_bounds() {
    let env = env();
    let bounds = env.spec().bounds.clone();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let (mut console, _) = ConsoleClient::connect(service.local_addr(), "a", TOKEN).unwrap();
    let mut sup = service.supervisor("a").unwrap();
    let waiting = thread::spawn(move || ask(&mut sup, 0));
    console.recv().unwrap();
    let wild = EnvAction(vec![1e6, -1e6]);
    console.send_action(0, wild.clone()).unwrap();
    let got = waiting.join().unwrap().unwrap();
    assert_eq!(got, bounds.clip(&wild));
    assert!(bounds.contains(&got));
}

#[test]
fn timeouts_are_resumable() {
    let env = env();
    let mut cfg = session("a", env.as_ref());
    cfg.timeout = Duration::from_millis(150);
    let service = serve("127.0.0.1:0", cfg).unwrap();
    let mut sup = service.supervisor("a").unwrap();
    let err = ask(&mut sup, 0).unwrap_err();
    assert!(matches!(err, SupervisorError::Timeout { t: 0, .. }), "{err}");
    assert!(err.is_resumable());
    assert_eq!(service.health().sessions[0].phase, Phase::AutonomousStreaming);

    let (mut console, resync) = ConsoleClient::connect(service.local_addr(), "a", TOKEN).unwrap();
    assert!(resync.pending.is_none());
    let again = thread::spawn(move || ask(&mut sup, 0));
    assert!(matches!(console.recv().unwrap(), Message::RequestIntervention(_)));
    console.send_action(0, EnvAction(vec![0.0, 0.1])).unwrap();
    assert_eq!(again.join().unwrap().unwrap(), EnvAction(vec![0.0, 0.1]));
}

#[test]
fn shutdown_disconnects_consoles() {
    let env = env();
    let service = serve("127.0.0.1:0", session("a", env.as_ref())).unwrap();
    let (mut console, _) = ConsoleClient::connect(service.local_addr(), "a", TOKEN).unwrap();
    console.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    service.shutdown();
    assert!(matches!(console.recv(), Err(InterventionError::Closed)));
}

#[test]
fn echoing_console_hands_control_straight_back() {
    let env = env();
    let (mut state, thresholds) = learner(env.as_ref(), 21);
    let config = lazy_config(thresholds, 1, 300);
    let service = serve("127.0.0.1:0", session("echo", env.as_ref())).unwrap();
    let (console, resync) = ConsoleClient::connect(service.local_addr(), "echo", TOKEN).unwrap();
    let worker = thread::spawn(move || console.serve(&resync, |r| r.robot_action.clone()).unwrap());
    let mut sup = service.supervisor("echo").unwrap();
    let logs = run_lazydagger(env.as_ref(), &mut state, &mut sup, &config, &train(), 21, &mut NoObserver).unwrap();
    service.shutdown();
    worker.join().unwrap();

    // d = 0 < tau_auto, so no step is ever taken in supervisor mode without
    // the classifier having just been consulted.
    let mut interventions = 0;
    for r in logs.iter().flat_map(|l| &l.records).filter(|r| r.mode == Mode::Supervisor) {
        assert_eq!(r.discrepancy, Some(0.0));
        assert!(r.f_prediction.is_some_and(|f| f >= 0.5), "t {} continued a supervisor run", r.t);
        interventions += 1;
    }
    assert!(interventions > 0);
}

#[test]
fn one_update_per_flip_and_decimated_summaries() {
    let env = env();
    let (mut state, thresholds) = learner(env.as_ref(), 2);
    let config = lazy_config(thresholds, 1, 400);
    let mut cfg = session("m", env.as_ref());
    cfg.decimation = 7;
    let service = serve("127.0.0.1:0", cfg).unwrap();
    let (mut console, _) = ConsoleClient::connect(service.local_addr(), "m", TOKEN).unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let worker = thread::spawn(move || {
        let env = common::env();
        loop {
            match console.recv() {
                Ok(Message::RequestIntervention(r)) => {
                    console.send_action(r.t, env.supervisor_action(&r.state)).unwrap();
                }
                Ok(Message::ModeUpdate(u)) => sink.lock().unwrap().push(u),
                Ok(_) => {}
                Err(_) => return,
            }
        }
    });
    let mut sup = service.supervisor("m").unwrap();
    let logs = run_lazydagger(env.as_ref(), &mut state, &mut sup, &config, &train(), 2, &mut NoObserver).unwrap();
    sup.finish();

    let report = summarize(&logs).unwrap();
    let mut streamed_autonomous = 0;
    for log in &logs {
        let mut prev = Mode::Autonomous;
        for r in &log.records {
            if r.mode == Mode::Autonomous && prev == Mode::Autonomous {
                streamed_autonomous += 1;
            }
            prev = r.mode;
        }
    }
    let flips = report.totals.context_switches;
    let summaries = streamed_autonomous / 7;
    assert!(flips > 0);
    wait_until("all updates", || seen.lock().unwrap().len() == flips + summaries);
    let seen = seen.lock().unwrap().clone();
    let transitions: Vec<_> = seen.iter().filter(|u| u.kind == UpdateKind::Transition).collect();
    assert_eq!(transitions.len(), flips);
    assert_eq!(seen.len() - transitions.len(), summaries);
    for pair in transitions.windows(2) {
        assert_ne!(pair[0].mode, pair[1].mode, "consecutive transitions must alternate");
    }
    let last = seen.last().unwrap();
    assert_eq!(last.counters.context_switches as usize, flips);
    assert_eq!(last.counters.supervisor_actions as usize, report.totals.supervisor_actions);
    service.shutdown();
    worker.join().unwrap();
}

#[test]
fn raw_hello_bytes_are_accepted() {
    let env = env();
    let service = serve("127.0.0.1:0", session("s", env.as_ref())).unwrap();
    let mut s = TcpStream::connect(service.local_addr()).unwrap();
    let hello = Message::Hello(Hello {
        session_id: "s".into(),
        token: TOKEN.into(),
    });
    s.write_all(&encode(&hello).unwrap()).unwrap();
    assert!(matches!(read_message(&mut s).unwrap(), Message::Resync(r) if r.phase == Phase::Idle));
}
