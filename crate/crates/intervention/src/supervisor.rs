use std::sync::Arc;
use std::time::Instant;

use lazydagger_core::env::{EnvAction, EnvState};
use lazydagger_core::meta::{Mode, StepRecord, Supervisor, SupervisorError, SupervisorKind, SupervisorQuery};
use lazydagger_core::safety::AbsoluteThresholds;

use crate::protocol::{Counters, ErrorCode, InterventionRequest, Message, ModeUpdate, Phase, UpdateKind};
use crate::server::{Answer, EventKind, Inner, Session};

/// Rollout-side handle of a session: asks the connected console for
/// actions and streams mode changes to it.
///
/// While [`query`](Supervisor::query) waits, the caller's rollout is
/// paused; nothing else advances the environment.
pub struct RemoteSupervisor {
    session: Arc<Session>,
}

impl RemoteSupervisor {
    pub(crate) fn new(session: Arc<Session>) -> Self {
        RemoteSupervisor { session }
    }

    /// Thresholds shown to the console alongside each request.
    pub fn set_thresholds(&mut self, thresholds: AbsoluteThresholds) {
        self.session.lock().view.thresholds = Some(thresholds);
    }

    pub fn counters(&self) -> Counters {
        self.session.lock().view.counters
    }

    /// Closes an open supervisor run and returns the session to idle.
    pub fn finish(&mut self) {
        let mut inner = self.session.lock();
        self.close_run(&mut inner);
        inner.phase = Phase::Idle;
    }

    fn close_run(&self, inner: &mut Inner) {
        if inner.view.mode != Mode::Supervisor {
            return;
        }
        inner.view.mode = Mode::Autonomous;
        inner.view.counters.context_switches += 1;
        if let Some(state) = inner.view.state.clone() {
            let update = self.update(inner, UpdateKind::Transition, state);
            inner.send(&update);
        }
    }

    fn update(&self, inner: &Inner, kind: UpdateKind, state: EnvState) -> Message {
        Message::ModeUpdate(ModeUpdate {
            session_id: self.session.config.session_id.clone(),
            kind,
            mode: inner.view.mode,
            episode: inner.view.episode,
            t: inner.view.t,
            state,
            counters: inner.view.counters,
        })
    }
}

impl Supervisor for RemoteSupervisor {
    fn kind(&self) -> SupervisorKind {
        SupervisorKind::RemoteHuman
    }

    fn query(&mut self, query: &SupervisorQuery<'_>) -> Result<EnvAction, SupervisorError> {
        let session = &self.session;
        let timeout = session.config.timeout;
        let mut inner = session.lock();
        let request = InterventionRequest {
            session_id: session.config.session_id.clone(),
            episode: query.episode,
            t: query.t,
            state: query.state.clone(),
            scene: session.config.scene.clone(),
            robot_action: query.robot_action.clone(),
            thresholds: inner.view.thresholds,
        };
        inner.pending = Some(request.clone());
        inner.answer = None;
        inner.phase = Phase::AwaitingHuman;
        inner.log(EventKind::RequestSent {
            episode: query.episode,
            t: query.t,
        });
        inner.send(&Message::RequestIntervention(request));

        let deadline = Instant::now() + timeout;
        let answer = loop {
            if let Some(answer) = inner.answer.take() {
                break Some(answer);
            }
            let now = Instant::now();
            if now >= deadline {
                break None;
            }
            inner = session
                .cond
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        };
        inner.pending = None;
        inner.phase = Phase::AutonomousStreaming;
        match answer {
            Some(Answer::Action(a)) => Ok(a),
            Some(Answer::Disconnected) => Err(SupervisorError::Disconnected(format!(
                "console left while episode {} t {} was pending",
                query.episode, query.t
            ))),
            None => {
                let err = SupervisorError::Timeout {
                    seconds: timeout.as_secs_f64(),
                    episode: query.episode,
                    t: query.t,
                };
                inner.send(&Message::error(ErrorCode::Timeout, err.to_string()));
                Err(err)
            }
        }
    }

    fn observe(&mut self, record: &StepRecord, next_state: &EnvState) {
        let mut inner = self.session.lock();
        let episode = inner.view.episode;
        inner.log(EventKind::StepExecuted {
            episode,
            t: record.t,
            mode: record.mode,
        });
        inner.view.t = record.t + 1;
        inner.view.state = Some(next_state.clone());
        inner.phase = Phase::AutonomousStreaming;
        if record.mode == Mode::Supervisor {
            inner.view.counters.supervisor_actions += 1;
        }
        if record.mode != inner.view.mode {
            inner.view.mode = record.mode;
            inner.view.counters.context_switches += 1;
            let update = self.update(&inner, UpdateKind::Transition, next_state.clone());
            inner.send(&update);
        } else if record.mode == Mode::Autonomous {
            inner.view.autonomous_steps += 1;
            let every = self.session.config.decimation as u64;
            if every > 0 && inner.view.autonomous_steps.is_multiple_of(every) {
                let update = self.update(&inner, UpdateKind::Summary, next_state.clone());
                inner.send(&update);
            }
        }
    }

    fn episode_start(&mut self, episode: usize, state: &EnvState) {
        let mut inner = self.session.lock();
        self.close_run(&mut inner);
        inner.view.episode = episode;
        inner.view.t = 0;
        inner.view.state = Some(state.clone());
        inner.phase = Phase::AutonomousStreaming;
    }
}
