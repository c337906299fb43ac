use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use simlab_core::dialogue::{Conversation, SystemRef, Termination};
use simlab_core::metrics::AspectScorer;
use simlab_core::metrics::{oracle_classify, ConsistencyScorer, UnderstandingScorer};
use simlab_core::protocol::{decode_message, encode_message};
use simlab_core::protocol::{
    InformationNeed, Message, MessageKind, ReceiveUtteranceRequest, Role, Utterance,
};
use simlab_core::reference::{ReferenceAgent, ReferenceSimulator, SimulatorOptions};
use simlab_core::tasks::{generate_needs, match_items, Catalog, GeneratorParams};

/// Transcript produced by driving the reference pair in-process.
fn transcript(catalog: &Arc<Catalog>, need: &InformationNeed) -> Conversation {
    let agent = ReferenceAgent::new(Arc::clone(catalog));
    let sim = ReferenceSimulator::new(SimulatorOptions::default());
    sim.set_need(need.clone());
    let mut utterances = Vec::new();
    let mut last = sim
        .respond("bench", &Utterance::start_marker())
        .expect("opener");
    for _ in 0..10 {
        utterances.push(last.clone());
        if last.is_stop() {
            break;
        }
        let reply = agent.respond("bench", &last);
        utterances.push(reply.clone());
        last = sim.respond("bench", &reply).expect("simulator reply");
    }
    Conversation {
        id: "bench".into(),
        need: need.clone(),
        utterances,
        termination: Termination::Stopped,
        error: None,
        agent: SystemRef::new("ref-agent", "1.0"),
        simulator: SystemRef::new("ref-sim", "1.0"),
    }
}

fn benches(c: &mut Criterion) {
    let catalog = Arc::new(Catalog::builtin_movies());
    let needs = generate_needs(&catalog, 64, 7, GeneratorParams::default()).unwrap();

    c.bench_function("match_items", |b| {
        b.iter(|| {
            for need in &needs {
                black_box(match_items(need, &catalog).unwrap());
            }
        })
    });

    c.bench_function("generate_needs/1000", |b| {
        b.iter(|| generate_needs(&catalog, black_box(1000), 1, GeneratorParams::default()).unwrap())
    });

    let message = Message::ReceiveUtteranceRequest(ReceiveUtteranceRequest {
        conversation_id: "exp-c0001".into(),
        utterance: Utterance::new(Role::Agent, "How about Inception? Runtime: 148 minutes."),
    });
    let bytes = encode_message(&message).unwrap();
    c.bench_function("codec/encode", |b| {
        b.iter(|| encode_message(black_box(&message)).unwrap())
    });
    c.bench_function("codec/decode", |b| {
        b.iter(|| decode_message(MessageKind::ReceiveUtteranceRequest, black_box(&bytes)).unwrap())
    });

    let conversations: Vec<Conversation> = needs
        .iter()
        .take(16)
        .map(|n| transcript(&catalog, n))
        .collect();
    c.bench_function("oracle_classify/16", |b| {
        b.iter(|| {
            for conv in &conversations {
                black_box(oracle_classify(conv, &conv.need, &catalog));
            }
        })
    });
    c.bench_function("fed_scorers/16", |b| {
        b.iter_batched(
            || conversations.clone(),
            |convs| {
                for conv in &convs {
                    black_box(UnderstandingScorer.score(conv).unwrap());
                    black_box(ConsistencyScorer.score(conv).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(core, benches);
criterion_main!(core);
