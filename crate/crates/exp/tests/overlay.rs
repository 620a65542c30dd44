use citytb_core::Urn;
use citytb_exp::{Frame, OverlayError, OverlayLink, HEADER_LEN};
use proptest::prelude::*;

fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

#[test]
fn header_costs_fourteen_bytes_plus_urn() {
    let mut link = OverlayLink::new();
    let a = urn("n001");
    link.attach(1, a.clone());
    let bytes = link.mux_down(1, &a, b"hello");
    assert_eq!(bytes.len(), HEADER_LEN + a.to_string().len() + 5);
    assert_eq!(HEADER_LEN, 14);
}

#[test]
fn ten_nodes_behind_one_gateway_keep_their_sequences() {
    let mut link = OverlayLink::new();
    let nodes: Vec<Urn> = (0..10).map(|i| urn(&format!("n{i:03}"))).collect();
    for (i, n) in nodes.iter().enumerate() {
        link.attach(1 + (i % 2) as u32, n.clone());
    }
    let mut down = Vec::new();
    let mut up = Vec::new();
    for k in 0..100u32 {
        for (i, n) in nodes.iter().enumerate() {
            let s = 1 + (i % 2) as u32;
            down.extend(link.mux_down(s, n, format!("{n}/{k}").as_bytes()));
            up.extend(link.mux_up(n, format!("{n}/{k}").as_bytes()).unwrap());
        }
    }
    // One byte stream per direction, split back into frames.
    for (stream, is_down) in [(down, true), (up, false)] {
        let mut seen = vec![0u32; 10];
        let mut rest = &stream[..];
        while !rest.is_empty() {
            let (_, used) = Frame::decode(rest).unwrap();
            let f = if is_down {
                link.demux_down(&rest[..used]).unwrap()
            } else {
                link.demux_up(&rest[..used]).unwrap()
            };
            let i = nodes.iter().position(|n| *n == f.urn).unwrap();
            assert_eq!(f.session, 1 + (i % 2) as u32);
            assert_eq!(f.payload, format!("{}/{}", f.urn, seen[i]).into_bytes());
            seen[i] += 1;
            rest = &rest[used..];
        }
        assert_eq!(seen, vec![100; 10]);
    }
}

#[test]
fn frames_for_other_sessions_and_gaps_are_refused() {
    let mut link = OverlayLink::new();
    let (a, b) = (urn("a"), urn("b"));
    link.attach(1, a.clone());
    link.attach(2, b.clone());
    let forged = link.mux_down(1, &b, b"x");
    assert!(matches!(link.demux_down(&forged), Err(OverlayError::Misrouted { .. })));
    let _lost = link.mux_down(1, &a, b"0");
    let second = link.mux_down(1, &a, b"1");
    assert_eq!(
        link.demux_down(&second),
        Err(OverlayError::OutOfOrder {
            urn: a.clone(),
            expected: 0,
            got: 1
        })
    );
    assert!(link.mux_up(&urn("nobody"), b"x").is_none());
    assert_eq!(Frame::decode(&second[..10]), Err(OverlayError::Truncated));
}

proptest! {
    #[test]
    fn frames_round_trip(session in any::<u32>(), seq in any::<u32>(), id in "[a-z0-9]{1,20}", payload in proptest::collection::vec(any::<u8>(), 0..300)) {
        let f = Frame { session, seq, urn: urn(&id), payload };
        let bytes = f.encode();
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), (f, bytes.len()));
    }
}
