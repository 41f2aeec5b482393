use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::thread;
use std::time::Duration;

use pcsr_core::access::{encrypt_frame, keygen, setup, AttributeSet, Granularity, UserKey};
use pcsr_core::sampling::{resolution_ladder, ResolutionLevel};
use pcsr_core::PointCloud;
use pcsr_stream::{
    bench, run_matrix, serve, serve_with, BenchConfig, ConnectionMode, HttpConnection, LadderEntry, ServeOptions,
    StreamError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const TIMEOUT: Duration = Duration::from_secs(10);

fn cloud(n: usize) -> PointCloud {
    let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
    PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
}

/// Writes `frame_{res}.ply` for each ladder level and returns a key that can
/// open them plus one that cannot.
fn write_ladder(dir: &Path, n: usize) -> (UserKey, UserKey) {
    let mut mk = setup(b"stream harness test deployment seed").unwrap();
    mk.publish(["Role:Viewer", "Role:Guest"]).unwrap();
    let policy = "Role:Viewer".parse().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for (level, c) in resolution_ladder(&cloud(n)).unwrap() {
        let ef = encrypt_frame(&c, &policy, Granularity::Xyz, mk.public_params(), &mut rng).unwrap();
        fs::write(dir.join(format!("frame_{level}.ply")), ef.to_ply_bytes().unwrap()).unwrap();
    }
    let good = keygen(&mk, &AttributeSet::parse_list("Role:Viewer").unwrap()).unwrap();
    let bad = keygen(&mk, &AttributeSet::parse_list("Role:Guest").unwrap()).unwrap();
    (good, bad)
}

#[test]
fn serves_exact_bytes_and_404s() {
    let dir = tempfile::tempdir().unwrap();
    write_ladder(dir.path(), 2_000);
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let server = serve(dir.path(), 0).unwrap();
    let on_disk = fs::read(dir.path().join("frame_100.ply")).unwrap();
    assert_eq!(server.checksums().len(), 4);
    assert_eq!(
        server.checksums()["frame_100.ply"],
        <[u8; 32]>::from(Sha256::digest(&on_disk))
    );

    let host = server.addr().to_string();
    let mut c = HttpConnection::connect(&host, TIMEOUT).unwrap();
    let (status, body, keep) = c.get("/frames/frame_100.ply", false).unwrap();
    assert_eq!((status, keep), (200, true));
    assert_eq!(body, on_disk);
    let (status, _, _) = c.get("/frames/nope.ply", false).unwrap();
    assert_eq!(status, 404);
    let (status, _, _) = c.get("/frames/notes.txt", false).unwrap();
    assert_eq!(status, 404);
    let (status, _, _) = c.get("/frames/../Cargo.toml", false).unwrap();
    assert_eq!(status, 404);
    let (status, body, keep) = c.get("/frames/frame_50.ply", true).unwrap();
    assert_eq!((status, keep), (200, false));
    assert_eq!(
        body.len(),
        fs::metadata(dir.path().join("frame_50.ply")).unwrap().len() as usize
    );
}

#[test]
fn concurrent_gets_return_identical_bodies() {
    let dir = tempfile::tempdir().unwrap();
    write_ladder(dir.path(), 5_000);
    let server = serve(dir.path(), 0).unwrap();
    let host = server.addr().to_string();
    let bodies: Vec<Vec<u8>> = thread::scope(|s| {
        let hs: Vec<_> = (0..20)
            .map(|_| {
                s.spawn(|| {
                    let mut c = HttpConnection::connect(&host, TIMEOUT).unwrap();
                    c.get("/frames/frame_100.ply", false).unwrap().1
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let disk = fs::read(dir.path().join("frame_100.ply")).unwrap();
    assert_eq!(bodies.len(), 20);
    assert!(bodies.iter().all(|b| *b == disk));
}

#[test]
fn startup_errors() {
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(serve(empty.path(), 0), Err(StreamError::MissingFrames { .. })));

    let dir = tempfile::tempdir().unwrap();
    write_ladder(dir.path(), 1_000);
    let opts = ServeOptions {
        required: vec!["frame_100.ply".into(), "frame_6.25.ply".into()],
        ..ServeOptions::default()
    };
    match serve_with(dir.path(), 0, &opts) {
        Err(StreamError::MissingFrames { detail, .. }) => assert!(detail.contains("frame_6.25.ply")),
        other => panic!("expected MissingFrames, got {:?}", other.map(|s| s.port())),
    }

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    assert!(matches!(serve(dir.path(), port), Err(StreamError::PortInUse(p)) if p == port));
}

#[test]
fn shutdown_closes_idle_keep_alive_connections() {
    let dir = tempfile::tempdir().unwrap();
    write_ladder(dir.path(), 1_000);
    let mut server = serve(dir.path(), 0).unwrap();
    let host = server.addr().to_string();
    let mut c = HttpConnection::connect(&host, TIMEOUT).unwrap();
    assert_eq!(c.get("/frames/frame_25.ply", false).unwrap().0, 200);
    let trigger = server.shutdown_trigger();
    assert!(!trigger.is_triggered());
    let started = std::time::Instant::now();
    server.shutdown();
    assert!(trigger.is_triggered());
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(c.get("/frames/frame_25.ply", false).is_err());
    assert!(HttpConnection::connect(&host, Duration::from_millis(500))
        .and_then(|mut c| c.get("/frames/frame_25.ply", false))
        .is_err());
}

#[test]
fn bench_reports_and_decrypts() {
    let dir = tempfile::tempdir().unwrap();
    let (good, bad) = write_ladder(dir.path(), 4_000);
    let server = serve(dir.path(), 0).unwrap();
    let cfg = BenchConfig {
        clients: 10,
        fps: 10,
        duration_s: 10,
        concurrency: 10,
        scale: 0.5,
        connection: ConnectionMode::KeepAlive,
        decrypt_samples: 0,
    };
    let url = server.frame_url("frame_100.ply");
    let r = bench(&url, ResolutionLevel::Full, &cfg, Some(&good)).unwrap();
    assert_eq!(r.requests, 500);
    assert!(r.mean_ms > 0.0 && r.decrypt_mean_ms > 0.0);
    assert!(r.p50_ms <= r.p95_ms && r.p95_ms <= r.max_ms);
    assert_eq!(r.total_mean_ms, r.mean_ms + r.decrypt_mean_ms);
    assert_eq!(r.body_sha256, server.checksums()["frame_100.ply"]);

    let fresh = BenchConfig {
        connection: ConnectionMode::Fresh,
        scale: 0.1,
        ..cfg
    };
    let r = bench(&url, ResolutionLevel::Full, &fresh, None).unwrap();
    assert_eq!((r.requests, r.decrypt_mean_ms), (100, 0.0));

    assert!(matches!(
        bench(&url, ResolutionLevel::Full, &fresh, Some(&bad)),
        Err(StreamError::PolicyNotSatisfied)
    ));
    assert!(matches!(
        bench(&server.frame_url("missing.ply"), ResolutionLevel::Full, &fresh, None),
        Err(StreamError::HttpError(_))
    ));
}

#[test]
fn matrix_has_one_row_per_level_and_larger_frames_take_longer() {
    let dir = tempfile::tempdir().unwrap();
    let (good, _) = write_ladder(dir.path(), 40_000);
    let server = serve(dir.path(), 0).unwrap();
    let ladder: Vec<LadderEntry> = ResolutionLevel::ALL
        .iter()
        .map(|&resolution| LadderEntry {
            resolution,
            url: server.frame_url(&format!("frame_{resolution}.ply")),
        })
        .collect();
    let cfg = BenchConfig {
        scale: 0.002,
        ..BenchConfig::default()
    };
    let reports = run_matrix(&ladder, &cfg, Some(&good)).unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r.requests == 360));
    assert!(reports[0].mean_ms > reports[3].mean_ms, "{reports:#?}");
    assert!(reports[0].decrypt_mean_ms > reports[3].decrypt_mean_ms);
}
