use citytb_bus::registry::{tags, REGISTRY};
use citytb_bus::wire::encode_unchecked;
use citytb_bus::{decode_event, encode_event, CorrelationId, ManagementEvent, Payload, Value, WireKind};
use citytb_core::SimTime;
use proptest::prelude::*;

fn value_of(kind: WireKind) -> BoxedStrategy<Value> {
    match kind {
        WireKind::U64 => any::<u64>().prop_map(Value::U64).boxed(),
        WireKind::I64 => any::<i64>().prop_map(Value::I64).boxed(),
        WireKind::F64 => (-1e12f64..1e12).prop_map(Value::F64).boxed(),
        WireKind::Str => "\\PC{0,40}".prop_map(Value::Str).boxed(),
        WireKind::Bytes => proptest::collection::vec(any::<u8>(), 0..64)
            .prop_map(Value::Bytes)
            .boxed(),
        WireKind::Bool => any::<bool>().prop_map(Value::Bool).boxed(),
    }
}

fn any_kind() -> impl Strategy<Value = WireKind> {
    prop_oneof![
        Just(WireKind::U64),
        Just(WireKind::I64),
        Just(WireKind::F64),
        Just(WireKind::Str),
        Just(WireKind::Bytes),
        Just(WireKind::Bool),
    ]
}

fn event() -> impl Strategy<Value = ManagementEvent> {
    (0..REGISTRY.len())
        .prop_flat_map(|i| {
            let spec = &REGISTRY[i];
            let known: Vec<_> = spec
                .fields
                .iter()
                .map(|(tag, kind)| (Just(*tag), value_of(*kind), any::<bool>()))
                .collect();
            let extra = proptest::collection::vec(
                (1000u16..2000, any_kind()).prop_flat_map(|(t, k)| (Just(t), value_of(k))),
                0..4,
            );
            (
                Just(spec.name),
                any::<[u8; 16]>(),
                any::<u64>(),
                known,
                extra,
            )
        })
        .prop_map(|(name, cid, ts, known, extra)| {
            let mut fields: Vec<(u16, Value)> = known
                .into_iter()
                .filter(|(_, _, keep)| *keep)
                .map(|(t, v, _)| (t, v))
                .collect();
            fields.extend(extra);
            ManagementEvent {
                event_type: name.to_string(),
                correlation_id: CorrelationId(cid),
                published_at: SimTime(ts),
                payload: Payload { fields },
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_registered_type_round_trips(ev in event()) {
        let bytes = encode_event(&ev).unwrap();
        let back = decode_event(&bytes).unwrap();
        prop_assert_eq!(&back, &ev);
        prop_assert_eq!(encode_event(&back).unwrap(), bytes);
    }
}

#[test]
fn trailing_unknown_fields_survive_byte_for_byte() {
    let ev = ManagementEvent::new(
        "HELLO",
        CorrelationId::derive("gw07", 1),
        SimTime(30_000),
        Payload::new()
            .with_str(tags::GATEWAY, "urn:smartsantander:santander:gw07")
            .with_u64(tags::MEMBERS, 12),
    );
    let mut bytes = encode_event(&ev).unwrap();
    // A newer producer appends two fields this build has never heard of.
    bytes.extend_from_slice(&[0x0b, 0xb8, 4, 0, 0, 0, 3, b'n', b'e', b'w']);
    bytes.extend_from_slice(&[0x0b, 0xb9, 6, 1]);
    let len = bytes.len() as u32;
    bytes[..4].copy_from_slice(&len.to_be_bytes());
    let decoded = decode_event(&bytes).unwrap();
    assert_eq!(decoded.payload.fields.len(), 4);
    assert_eq!(decoded.payload.get(3000), Some(&Value::Str("new".into())));
    assert_eq!(encode_event(&decoded).unwrap(), bytes);
    assert_eq!(encode_unchecked(&decoded), bytes);
}
