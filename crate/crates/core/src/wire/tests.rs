use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::model::{parse_path, MetricName, MetricSample, Value};

fn sample(path: &str, metric: &str, t: u64, v: Value, ttl: u32) -> MetricSample {
    MetricSample::new(parse_path(path).unwrap(), MetricName::new(metric).unwrap(), t, v, ttl)
        .unwrap()
}

#[test]
fn encode_sample_fixed_key_order() {
    let s = sample("bnl/farm/n1", "cpu.load1", 1000, 0.5.into(), 60);
    assert_eq!(
        encode_sample(&s),
        "{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\",\"v\":0.5,\"ttl\":60}\n"
    );
    let text = sample("bnl/farm/n1", "sys.uptime", 1000, "up 14 days".into(), 60);
    assert_eq!(
        encode_sample(&text),
        "{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"sys.uptime\",\"v\":\"up 14 days\",\"ttl\":60}\n"
    );
}

#[test]
fn decode_sample_examples() {
    let line = b"{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\",\"v\":0.5,\"ttl\":60}\n";
    assert_eq!(
        decode_sample(line).unwrap(),
        sample("bnl/farm/n1", "cpu.load1", 1000, 0.5.into(), 60)
    );
    let missing_t = b"{\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\",\"v\":0.5,\"ttl\":60}";
    assert!(matches!(decode_sample(missing_t), Err(WireError::SchemaViolation(_))));
    let truncated = b"{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.lo";
    assert!(matches!(decode_sample(truncated), Err(WireError::MalformedRecord(_))));
}

#[test]
fn decode_sample_is_strict() {
    let cases: &[(&[u8], bool)] = &[
        // (line, is_schema_violation) otherwise malformed
        (b"{\"t\":1,\"p\":\"a\",\"m\":\"x\",\"v\":1.0,\"ttl\":1,\"extra\":1}", true),
        (b"{\"t\":\"1\",\"p\":\"a\",\"m\":\"x\",\"v\":1.0,\"ttl\":1}", true),
        (b"{\"t\":0,\"p\":\"a\",\"m\":\"x\",\"v\":1.0,\"ttl\":1}", true),
        (b"{\"t\":-5,\"p\":\"a\",\"m\":\"x\",\"v\":1.0,\"ttl\":1}", true),
        (b"{\"t\":1,\"p\":\"a//b\",\"m\":\"x\",\"v\":1.0,\"ttl\":1}", true),
        (b"{\"t\":1,\"p\":\"a\",\"m\":\"X Y\",\"v\":1.0,\"ttl\":1}", true),
        (b"{\"t\":1,\"p\":\"a\",\"m\":\"x\",\"v\":null,\"ttl\":1}", true),
        (b"[1,2]", true),
        (b"", false),
        (b"garbage", false),
        (b"{\"t\":1,", false),
    ];
    for (line, schema) in cases {
        let err = decode_sample(line).unwrap_err();
        assert_eq!(
            matches!(err, WireError::SchemaViolation(_)),
            *schema,
            "{}: {err}",
            String::from_utf8_lossy(line)
        );
    }
}

/// Canonical records whose bytes must never change.
const GOLDEN: [&str; 5] = [
    "{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\",\"v\":0.5,\"ttl\":60}\n",
    "{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"sys.uptime\",\"v\":\"up 14 days\",\"ttl\":60}\n",
    "{\"t\":1700000000000,\"p\":\"uta/atlas/gk1\",\"m\":\"mem.used_bytes\",\"v\":17179869184.0,\"ttl\":120}\n",
    "{\"t\":1,\"p\":\"a\",\"m\":\"cpu.util\",\"v\":-0.25,\"ttl\":0}\n",
    "{\"t\":42,\"p\":\"bnl/linux-farm/node0042/disk0\",\"m\":\"disk.used_bytes\",\"v\":1e+21,\"ttl\":86400}\n",
];

#[test]
fn golden_records_are_stable() {
    for line in GOLDEN {
        let s = decode_sample(line.as_bytes()).unwrap();
        assert_eq!(encode_sample(&s), line);
    }
}

#[test]
fn control_message_bytes() {
    let msg = Message::QueryLatest {
        cid: 7,
        p: parse_path("bnl/farm/n1").unwrap(),
        m: MetricName::new("cpu.load1").unwrap(),
        hops: 0,
    };
    assert_eq!(
        encode_message(&msg),
        "{\"k\":\"QUERY_LATEST\",\"cid\":7,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\"}\n"
    );
    let reply = Message::Reply(Reply {
        cid: 7,
        samples: Some(vec![sample("bnl/farm/n1", "cpu.load1", 1000, 0.5.into(), 60)]),
        source: Some(Source::Cache),
        stale: Some(false),
        ..Reply::ok()
    });
    assert_eq!(
        encode_message(&reply),
        "{\"k\":\"REPLY\",\"cid\":7,\"samples\":[{\"t\":1000,\"p\":\"bnl/farm/n1\",\"m\":\"cpu.load1\",\"v\":0.5,\"ttl\":60}],\"source\":\"cache\",\"stale\":false}\n"
    );
    assert_eq!(decode_message(encode_message(&reply).as_bytes()).unwrap(), reply);
    let unknown = b"{\"k\":\"QUERY_REGISTRY\",\"cid\":1,\"bogus\":true}";
    assert!(matches!(decode_message(unknown), Err(WireError::SchemaViolation(_))));
    let err = Message::Error(ErrorReply {
        cid: 3,
        code: ErrorCode::HopLimitExceeded,
        msg: "loop".into(),
    });
    assert_eq!(
        encode_message(&err),
        "{\"k\":\"ERROR\",\"cid\":3,\"code\":\"HOP_LIMIT_EXCEEDED\",\"msg\":\"loop\"}\n"
    );
}

#[test]
fn frames_are_told_apart_by_leading_kind() {
    let s = sample("a/b", "x", 5, 1.0.into(), 1);
    assert_eq!(decode_frame(encode_sample(&s).as_bytes()).unwrap(), Frame::Sample(s));
    let hello = Message::Hello {
        cid: 0,
        role: Role::Producer,
        node: "n".into(),
    };
    assert_eq!(
        decode_frame(encode_message(&hello).as_bytes()).unwrap(),
        Frame::Control(hello)
    );
}

// --- property tests -------------------------------------------------------

pub(crate) fn arb_path() -> impl Strategy<Value = ResourcePath> {
    prop::collection::vec("[a-z0-9][a-z0-9._-]{0,5}", 1..=4)
        .prop_map(|segs| parse_path(&segs.join("/")).unwrap())
}

fn arb_metric() -> impl Strategy<Value = MetricName> {
    "[a-z][a-z0-9._]{0,10}".prop_map(|m| MetricName::new(&m).unwrap())
}

fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<f64>()
            .prop_filter("finite", |v| v.is_finite())
            .prop_map(Value::Number),
        (-1_000_000i64..1_000_000).prop_map(|v| Value::Number(v as f64)),
        ".{0,20}".prop_map(Value::Text),
    ]
}

pub(crate) fn arb_sample() -> impl Strategy<Value = MetricSample> {
    (arb_path(), arb_metric(), 1u64..u64::MAX / 2, arb_value(), any::<u32>())
        .prop_map(|(p, m, t, v, ttl)| MetricSample::new(p, m, t, v, ttl).unwrap())
}

fn arb_filter() -> impl Strategy<Value = MetricFilter> {
    prop_oneof![Just(MetricFilter::Any), arb_metric().prop_map(MetricFilter::Exact)]
}

fn arb_message() -> impl Strategy<Value = Message> {
    let cid = any::<u64>();
    prop_oneof![
        (cid, prop::bool::ANY, ".{0,8}").prop_map(|(cid, p, node)| Message::Hello {
            cid,
            role: if p { Role::Producer } else { Role::Consumer },
            node
        }),
        (cid, arb_path(), arb_filter(), any::<u64>()).prop_map(|(cid, prefix, metric, expiry)| {
            Message::Subscribe {
                cid,
                prefix,
                metric,
                expiry,
            }
        }),
        (cid, arb_path(), arb_filter())
            .prop_map(|(cid, prefix, metric)| Message::Unsubscribe { cid, prefix, metric }),
        (cid, arb_path(), arb_metric(), 0u8..9)
            .prop_map(|(cid, p, m, hops)| Message::QueryLatest { cid, p, m, hops }),
        (cid, arb_path(), arb_metric(), any::<u64>(), any::<u64>(), 0u8..9).prop_map(
            |(cid, p, m, from, to, hops)| Message::QueryRange {
                cid,
                p,
                m,
                from,
                to,
                hops
            }
        ),
        (cid, arb_path(), 0usize..3, ".{0,12}", any::<u32>()).prop_map(
            |(cid, subtree, k, endpoint, ttl)| Message::Register {
                cid,
                subtree,
                kind: [ProviderKind::Agent, ProviderKind::Archive, ProviderKind::Directory][k],
                endpoint,
                ttl
            }
        ),
        (cid, arb_path(), ".{0,12}")
            .prop_map(|(cid, subtree, endpoint)| Message::Renew { cid, subtree, endpoint }),
        (cid, arb_path(), ".{0,12}")
            .prop_map(|(cid, subtree, endpoint)| Message::Deregister { cid, subtree, endpoint }),
        cid.prop_map(|cid| Message::QueryRegistry { cid }),
        (
            cid,
            prop::option::of(prop::collection::vec(arb_sample(), 0..3)),
            prop::option::of(prop::bool::ANY),
            prop::option::of(any::<u64>()),
        )
            .prop_map(|(cid, samples, stale, fetched_at)| Message::Reply(Reply {
                cid,
                samples,
                source: stale.map(|s| if s { Source::Cache } else { Source::Upstream }),
                stale,
                fetched_at,
                expires_at: fetched_at.map(|f| f / 2),
                entries: None,
            })),
        (cid, ".{0,12}").prop_map(|(cid, msg)| Message::Error(ErrorReply {
            cid,
            code: ErrorCode::UpstreamUnreachable,
            msg
        })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sample_round_trip(s in arb_sample()) {
        let line = encode_sample(&s);
        prop_assert!(line.ends_with('\n'));
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert_eq!(decode_sample(line.as_bytes()).unwrap(), s);
    }

    #[test]
    fn message_round_trip(m in arb_message()) {
        let line = encode_message(&m);
        prop_assert_eq!(decode_frame(line.as_bytes()).unwrap(), Frame::Control(m));
    }

    #[test]
    fn delivery_filter_matches_brute_force(
        subs in prop::collection::vec((arb_path(), arb_filter()), 1..4),
        stream in prop::collection::vec(arb_sample(), 0..40),
    ) {
        let handler = Arc::new(StreamingHandler::default());
        let mut link = DirectLink::new(Arc::clone(&handler));
        let mut client = WireClient::connect(&mut link, Role::Consumer, "c").unwrap();
        for (prefix, metric) in &subs {
            client.call(Message::Subscribe {
                cid: 0,
                prefix: prefix.clone(),
                metric: metric.clone(),
                expiry: u64::MAX,
            }).unwrap();
        }
        drop(client);
        let mut delivered = Vec::new();
        for s in &stream {
            if link.publish(s) {
                delivered.push(s.clone());
            }
        }
        let expected: Vec<MetricSample> = stream
            .iter()
            .filter(|s| subs.iter().any(|(prefix, metric)| {
                let comps = prefix.components();
                s.path().components().len() >= comps.len()
                    && s.path().components()[..comps.len()] == *comps
                    && (matches!(metric, MetricFilter::Any)
                        || matches!(metric, MetricFilter::Exact(m) if m == s.metric()))
            }))
            .cloned()
            .collect();
        prop_assert_eq!(&delivered, &expected);
        let mut received = Vec::new();
        while let Ok(Some(line)) = link.recv_line() {
            received.push(decode_sample(line.as_bytes()).unwrap());
        }
        prop_assert_eq!(received, expected);
    }

    #[test]
    fn every_request_is_answered_once(ops in prop::collection::vec(0u8..6, 0..60)) {
        let handler = Arc::new(StreamingHandler::default());
        let mut conn = ServerConn::new(Arc::clone(&handler));
        let mut client_session = Session::connect(Role::Consumer, "c");
        let mut trace: Vec<Message> = Vec::new();
        let mut out = Vec::new();
        let hello = client_session.hello().unwrap();
        conn.on_line(&encode_message(&hello), &mut out).unwrap();
        for line in out.drain(..) {
            client_session.on_frame(decode_frame(line.as_bytes()).unwrap()).unwrap();
        }
        let p = parse_path("a/b").unwrap();
        let m = MetricName::new("x").unwrap();
        let mut requests = 0u64;
        for op in ops {
            let msg = match op {
                0 => Message::QueryLatest { cid: 0, p: p.clone(), m: m.clone(), hops: 0 },
                1 => Message::QueryRange { cid: 0, p: p.clone(), m: m.clone(), from: 0, to: 10, hops: 0 },
                2 => Message::Subscribe { cid: 0, prefix: p.clone(), metric: MetricFilter::Any, expiry: 100 },
                3 => Message::Unsubscribe { cid: 0, prefix: p.clone(), metric: MetricFilter::Any },
                4 => Message::Register { cid: 0, subtree: p.clone(), kind: ProviderKind::Agent, endpoint: "e".into(), ttl: 1 },
                _ => Message::QueryRegistry { cid: 0 },
            };
            let msg = client_session.request(msg).unwrap();
            requests += 1;
            conn.on_line(&encode_message(&msg), &mut out).unwrap();
            for line in out.drain(..) {
                if let Frame::Control(m) = decode_frame(line.as_bytes()).unwrap() {
                    client_session.on_frame(Frame::Control(m.clone())).unwrap();
                    trace.push(m);
                }
            }
        }
        let answers = trace
            .iter()
            .filter(|m| matches!(m, Message::Reply(_) | Message::Error(_)))
            .count() as u64;
        prop_assert_eq!(answers, requests);
        prop_assert_eq!(client_session.outstanding(), 0);
        prop_assert_eq!(conn.session().stats().answers_sent, requests);
    }
}

// --- session behaviour -----------------------------------------------------

#[derive(Default)]
struct StreamingHandler {
    now: AtomicU64,
    received: Mutex<Vec<MetricSample>>,
}

impl WireHandler for StreamingHandler {
    fn node(&self) -> String {
        "test-producer".into()
    }
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }
    fn streams(&self) -> bool {
        true
    }
    fn on_sample(&self, sample: MetricSample) {
        self.received.lock().unwrap().push(sample);
    }
    fn on_request(&self, req: &Message) -> Result<Reply, ErrorReply> {
        match req {
            Message::QueryLatest { .. } => Ok(Reply {
                samples: Some(vec![]),
                ..Reply::ok()
            }),
            other => Err(ErrorReply::new(ErrorCode::Unsupported, other.kind())),
        }
    }
}

#[test]
fn subscribe_then_publish_over_memory_pipe() {
    let handler = Arc::new(StreamingHandler::default());
    handler.now.store(1_000, Ordering::Release);
    let (client_end, server_end) = mem_pipe();
    let (pub_tx, pub_rx) = std::sync::mpsc::channel::<MetricSample>();

    let server_handler = Arc::clone(&handler);
    let server = std::thread::spawn(move || {
        let mut server_end = server_end.with_timeout(Duration::from_millis(20));
        let mut conn = ServerConn::new(server_handler);
        loop {
            let mut out = Vec::new();
            match server_end.recv_line() {
                Ok(Some(line)) => {
                    conn.on_line(&line, &mut out).unwrap();
                }
                Ok(None) => break,
                Err(_) => {}
            }
            while let Ok(s) = pub_rx.try_recv() {
                conn.publish(&s, &mut out);
            }
            for l in out {
                if server_end.send_line(&l).is_err() {
                    return;
                }
            }
        }
    });

    let mut client = WireClient::connect(
        client_end.with_timeout(Duration::from_millis(500)),
        Role::Consumer,
        "consumer",
    )
    .unwrap();
    client
        .call(Message::Subscribe {
            cid: 0,
            prefix: parse_path("bnl/farm").unwrap(),
            metric: MetricFilter::Any,
            expiry: 10_000,
        })
        .unwrap();

    let matching = [
        sample("bnl/farm/n1", "cpu.load1", 1100, 0.1.into(), 60),
        sample("bnl/farm/n2", "mem.used_bytes", 1200, 5.0.into(), 60),
    ];
    pub_tx.send(sample("bnl/disk/n1", "cpu.load1", 1050, 1.0.into(), 60)).unwrap();
    for s in &matching {
        pub_tx.send(s.clone()).unwrap();
    }
    pub_tx.send(sample("uta/farm/n1", "cpu.load1", 1300, 1.0.into(), 60)).unwrap();

    let mut got = Vec::new();
    while let Some(s) = client.recv_sample().unwrap() {
        got.push(s);
    }
    assert_eq!(got, matching);
    drop(client);
    server.join().unwrap();
}

#[test]
fn sample_before_hello_is_a_violation() {
    let handler = Arc::new(StreamingHandler::default());
    let mut conn = ServerConn::new(handler);
    let mut out = Vec::new();
    let s = sample("a", "x", 1, 1.0.into(), 1);
    let err = conn.on_line(&encode_sample(&s), &mut out).unwrap_err();
    assert!(err.0.contains("before HELLO"), "{err}");
    assert_eq!(conn.session().state(), SessionState::Closed);
    assert!(out[0].starts_with("{\"k\":\"ERROR\",\"cid\":0,\"code\":\"PROTOCOL_VIOLATION\""));
}

#[test]
fn subscription_expiry_stops_delivery_silently() {
    let handler = Arc::new(StreamingHandler::default());
    handler.now.store(1_000, Ordering::Release);
    let mut link = DirectLink::new(Arc::clone(&handler));
    {
        let mut client = WireClient::connect(&mut link, Role::Consumer, "c").unwrap();
        client
            .call(Message::Subscribe {
                cid: 0,
                prefix: parse_path("a").unwrap(),
                metric: MetricFilter::Exact(MetricName::new("x").unwrap()),
                expiry: 2_000,
            })
            .unwrap();
    }
    assert!(link.publish(&sample("a/b", "x", 1500, 1.0.into(), 1)));
    handler.now.store(2_000, Ordering::Release);
    assert!(!link.publish(&sample("a/b", "x", 2000, 2.0.into(), 1)));
    assert!(link.recv_line().unwrap().is_some());
    assert!(link.recv_line().is_err(), "nothing after expiry, and no error line");
}

#[test]
fn producer_push_mode_and_bad_lines() {
    let handler = Arc::new(StreamingHandler::default());
    let mut link = DirectLink::new(Arc::clone(&handler));
    let mut client = WireClient::connect(&mut link, Role::Producer, "agent").unwrap();
    client.send_sample(&sample("a", "x", 1, 1.0.into(), 1)).unwrap();
    client.transport_mut().send_line("not json\n").unwrap();
    client.send_sample(&sample("a", "x", 2, 1.0.into(), 1)).unwrap();
    assert_eq!(handler.received.lock().unwrap().len(), 2);
    assert_eq!(link.conn().session().role(), Some(Role::Consumer));
}

#[test]
fn consumer_may_not_push_samples_and_roles_must_differ() {
    let handler = Arc::new(StreamingHandler::default());
    let mut link = DirectLink::new(Arc::clone(&handler));
    {
        let mut client = WireClient::connect(&mut link, Role::Consumer, "c").unwrap();
        assert!(client.send_sample(&sample("a", "x", 1, 1.0.into(), 1)).is_err());
    }
    // Raw line bypassing the client-side check.
    link.send_line(&encode_sample(&sample("a", "x", 1, 1.0.into(), 1))).unwrap();
    assert_eq!(link.conn().session().state(), SessionState::Closed);

    let mut s = Session::connect(Role::Producer, "p");
    s.hello().unwrap();
    let same = Frame::Control(Message::Hello {
        cid: 0,
        role: Role::Producer,
        node: "q".into(),
    });
    assert!(s.on_frame(same).is_err());
}

#[test]
fn unknown_reply_cid_is_a_violation() {
    let mut s = Session::connect(Role::Consumer, "c");
    s.hello().unwrap();
    s.on_frame(Frame::Control(Message::Hello {
        cid: 0,
        role: Role::Producer,
        node: "p".into(),
    }))
    .unwrap();
    let stray = Frame::Control(Message::Reply(Reply {
        cid: 99,
        ..Reply::ok()
    }));
    assert!(s.on_frame(stray).is_err());
    assert_eq!(s.state(), SessionState::Closed);
}

#[test]
fn tcp_server_round_trip() {
    let handler = Arc::new(StreamingHandler::default());
    handler.now.store(5, Ordering::Release);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut server = serve_tcp(listener, Arc::clone(&handler)).unwrap();
    let addr = server.local_addr().to_string();
    let t = TcpTransport::connect(&addr, Duration::from_secs(2)).unwrap();
    let mut client = WireClient::connect(t, Role::Consumer, "c").unwrap();
    let reply = client
        .call(Message::QueryLatest {
            cid: 0,
            p: parse_path("a").unwrap(),
            m: MetricName::new("x").unwrap(),
            hops: 0,
        })
        .unwrap();
    assert_eq!(reply.samples, Some(vec![]));
    client
        .call(Message::Subscribe {
            cid: 0,
            prefix: parse_path("a").unwrap(),
            metric: MetricFilter::Any,
            expiry: 1_000,
        })
        .unwrap();
    let s = sample("a/b", "x", 3, 1.0.into(), 1);
    assert_eq!(server.publish(&s), 1);
    assert_eq!(client.recv_sample().unwrap(), Some(s));
    let err = client.call(Message::QueryRegistry { cid: 0 }).unwrap_err();
    assert!(matches!(err, ClientError::Remote { code: ErrorCode::Unsupported, .. }));
    server.shutdown();
}
