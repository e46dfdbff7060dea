//! Loopback integration tests for the broadcast and control services.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};
use stetho_core::dsp::Cutoff;
use stetho_core::service::{
    listen_client, listen_on, PacketSink, ServeConfig, ServiceError, StreamServer,
};
use stetho_core::transport::{encode_packet, Packet};

fn test_packet(seq: u16) -> Packet {
    let codes: Vec<u16> = (0..48).map(|i| ((seq as u32 * 48 + i) % 4096) as u16).collect();
    Packet::new(seq, seq as u32 * 48, 0, codes).unwrap()
}

#[derive(Default)]
struct Collector {
    packets: Vec<Packet>,
    closed: bool,
}

impl PacketSink for Collector {
    fn on_packet(&mut self, packet: Packet) -> Result<(), ServiceError> {
        self.packets.push(packet);
        Ok(())
    }
    fn on_close(&mut self) -> Result<(), ServiceError> {
        self.closed = true;
        Ok(())
    }
}

fn wait_for_sessions(server: &StreamServer, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while server.session_count() < n {
        assert!(Instant::now() < deadline, "listeners never registered");
        thread::sleep(Duration::from_millis(2));
    }
}

#[test]
fn listeners_decode_the_broadcast_packets() {
    let server = StreamServer::bind(ServeConfig::default()).unwrap();
    let addr = server.stream_addr();

    let handle = thread::spawn(move || {
        let mut sink = Collector::default();
        let stats = listen_client(addr, &mut sink).unwrap();
        (sink, stats)
    });
    wait_for_sessions(&server, 1);

    let packets: Vec<Packet> = (0..20).map(test_packet).collect();
    for p in &packets {
        server.publish_packet(p).unwrap();
    }
    server.shutdown();

    let (sink, stats) = handle.join().unwrap();
    assert!(sink.closed, "sink must be flushed on server close");
    assert_eq!(stats.packets, 20);
    assert_eq!(sink.packets, packets);
}

#[test]
fn publishing_with_zero_listeners_is_fine() {
    let server = StreamServer::bind(ServeConfig::default()).unwrap();
    for i in 0..50 {
        server.publish_packet(&test_packet(i)).unwrap();
    }
    assert_eq!(server.session_count(), 0);
}

#[test]
fn late_joiner_sees_only_the_suffix() {
    let server = StreamServer::bind(ServeConfig::default()).unwrap();
    let addr = server.stream_addr();

    let early = thread::spawn(move || {
        let mut sink = Collector::default();
        listen_client(addr, &mut sink).unwrap();
        sink
    });
    wait_for_sessions(&server, 1);

    for i in 0..10 {
        server.publish_packet(&test_packet(i)).unwrap();
    }

    let (tx, rx) = mpsc::channel();
    let late = thread::spawn(move || {
        let stream = TcpStream::connect(addr).unwrap();
        tx.send(()).unwrap();
        let mut sink = Collector::default();
        listen_on(stream, &mut sink).unwrap();
        sink
    });
    rx.recv_timeout(Duration::from_secs(5)).unwrap();
    wait_for_sessions(&server, 2);

    for i in 10..30 {
        server.publish_packet(&test_packet(i)).unwrap();
    }
    server.shutdown();

    let early_sink = early.join().unwrap();
    let late_sink = late.join().unwrap();
    assert_eq!(early_sink.packets.len(), 30);
    // The late joiner starts at some publish boundary after its join and
    // from there sees exactly the broadcast order.
    assert!(late_sink.packets.len() <= 20);
    assert!(!late_sink.packets.is_empty());
    let first_seq = late_sink.packets[0].seq;
    assert!(first_seq >= 10, "joiner saw packet {first_seq} from before its join");
    let expected: Vec<Packet> = (first_seq..30).map(test_packet).collect();
    assert_eq!(late_sink.packets, expected);
}

#[test]
fn malformed_length_prefix_is_a_protocol_error() {
    // A raw server that advertises an oversized frame.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        stream.write_all(&500u16.to_be_bytes()).unwrap();
        stream.write_all(&[0u8; 500]).unwrap();
    });

    let mut sink = Collector::default();
    let err = listen_client(addr, &mut sink).unwrap_err();
    assert!(matches!(err, ServiceError::FrameLength(500)));
    assert!(!sink.closed);
    server.join().unwrap();
}

#[test]
fn connection_refused_is_reported() {
    // Bind and drop a listener to get a port nothing listens on.
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut sink = Collector::default();
    let err = listen_client(("127.0.0.1", port), &mut sink);
    assert!(matches!(err, Err(ServiceError::Io(_))));
}

fn control_exchange(stream: &mut TcpStream, reader: &mut BufReader<TcpStream>, line: &str) -> String {
    stream.write_all(line.as_bytes()).unwrap();
    stream.write_all(b"\n").unwrap();
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    reply.trim_end().to_string()
}

#[test]
fn control_protocol_round_trip() {
    let server = StreamServer::bind(ServeConfig::default()).unwrap();
    let mut stream = TcpStream::connect(server.control_addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());

    assert_eq!(
        control_exchange(&mut stream, &mut reader, "GET STATUS"),
        "STATUS cutoff=100 volume=0.500"
    );
    let gen0 = server.control_state().generation;

    assert_eq!(
        control_exchange(&mut stream, &mut reader, "SET VOLUME 0.25"),
        "OK"
    );
    let state = server.control_state();
    assert_eq!(state.config.volume, 0.25);
    assert_eq!(state.generation, gen0 + 1);

    assert_eq!(
        control_exchange(&mut stream, &mut reader, "SET CUTOFF 1000"),
        "OK"
    );
    assert_eq!(server.control_state().config.cutoff, Cutoff::Hz1000);

    // Rejected commands leave the config untouched.
    let reply = control_exchange(&mut stream, &mut reader, "SET CUTOFF 500");
    assert!(reply.starts_with("ERR "), "got {reply}");
    let reply = control_exchange(&mut stream, &mut reader, "SET VOLUME 1.5");
    assert!(reply.starts_with("ERR "), "got {reply}");
    let state = server.control_state();
    assert_eq!(state.config.cutoff, Cutoff::Hz1000);
    assert_eq!(state.config.volume, 0.25);
    assert_eq!(state.generation, gen0 + 2);

    assert_eq!(
        control_exchange(&mut stream, &mut reader, "GET STATUS"),
        "STATUS cutoff=1000 volume=0.250"
    );
}

#[test]
fn broadcast_bytes_are_identical_across_listeners() {
    // Byte-level variant of the fan-out property: raw streams compared
    // without decoding.
    let server = StreamServer::bind(ServeConfig::default()).unwrap();
    let addr = server.stream_addr();

    let mut handles = Vec::new();
    for _ in 0..2 {
        handles.push(thread::spawn(move || {
            use std::io::Read;
            let mut stream = TcpStream::connect(addr).unwrap();
            let mut bytes = Vec::new();
            stream.read_to_end(&mut bytes).unwrap();
            bytes
        }));
    }
    wait_for_sessions(&server, 2);

    let mut expected = Vec::new();
    for i in 0..100 {
        let frame = encode_packet(&test_packet(i)).unwrap();
        expected.extend_from_slice(&(frame.len() as u16).to_be_bytes());
        expected.extend_from_slice(&frame);
        server.publish_frame(&frame).unwrap();
    }
    server.shutdown();

    let a = handles.pop().unwrap().join().unwrap();
    let b = handles.pop().unwrap().join().unwrap();
    assert_eq!(a, expected);
    assert_eq!(a, b);
}
