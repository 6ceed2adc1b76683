use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use tracenet::authority::{serialize_list, verify_list_bytes};
use tracenet::ident::{decode_beacon, encode_beacon, DailyIdentifier, Rdi};
use tracenet::matching::{brute_force_match, match_contacts, CarrierIndex};
use tracenet_bench::{carrier_list, contact_log};

fn beacon(c: &mut Criterion) {
    let id = DailyIdentifier {
        rdi: Rdi(0x0123_4567_89ab_cdef_0011_2233_4455_6677),
        date: 12,
    };
    let bytes = encode_beacon(&id);
    c.bench_function("beacon/encode", |b| b.iter(|| encode_beacon(black_box(&id))));
    c.bench_function("beacon/decode", |b| b.iter(|| decode_beacon(black_box(&bytes))));
}

fn matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("match");
    for n in [100, 1_000, 10_000] {
        let log = contact_log(n, 1);
        let (list, pk) = carrier_list(&log, n, n / 10, 2);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("indexed", n), &n, |b, _| {
            b.iter(|| {
                let index = CarrierIndex::build(&list, &pk).unwrap();
                match_contacts(log.records(), &index)
            })
        });
        if n <= 1_000 {
            g.bench_with_input(BenchmarkId::new("brute_force", n), &n, |b, _| {
                b.iter(|| brute_force_match(log.records(), &list.entries))
            });
        }
    }
    g.finish();
}

fn signed_list(c: &mut Criterion) {
    let log = contact_log(10, 3);
    let (list, pk) = carrier_list(&log, 10_000, 0, 4);
    let bytes = serialize_list(&list);
    c.bench_function("list/serialize_10k", |b| b.iter(|| serialize_list(black_box(&list))));
    c.bench_function("list/verify_10k", |b| {
        b.iter(|| verify_list_bytes(black_box(&bytes), &pk))
    });
}

criterion_group!(benches, beacon, matching, signed_list);
criterion_main!(benches);
