use proptest::prelude::*;

use super::*;

fn hash() -> impl Strategy<Value = Hash256> {
    any::<[u8; 32]>().prop_map(Hash256)
}

fn inv_vector() -> impl Strategy<Value = InvVector> {
    (prop_oneof![Just(InvType::Tx), Just(InvType::Block), (3u32..).prop_map(InvType::Other)], hash())
        .prop_map(|(object_type, hash)| InvVector { object_type, hash })
}

fn netaddr() -> impl Strategy<Value = NetAddr> {
    (any::<u64>(), any::<[u8; 16]>(), any::<u16>()).prop_map(|(services, ip, port)| NetAddr {
        services,
        ip,
        port,
    })
}

fn version() -> impl Strategy<Value = VersionPayload> {
    (
        any::<i32>(),
        any::<u64>(),
        any::<i64>(),
        netaddr(),
        netaddr(),
        any::<u64>(),
        "\\PC{0,80}",
        any::<i32>(),
        any::<bool>(),
    )
        .prop_map(
            |(protocol_version, services, timestamp, receiver, sender, nonce, user_agent, start_height, relay)| {
                VersionPayload {
                    protocol_version,
                    services,
                    timestamp,
                    receiver,
                    sender,
                    nonce,
                    user_agent,
                    start_height,
                    relay,
                }
            },
        )
}

fn payload() -> impl Strategy<Value = Payload> {
    let bytes = || proptest::collection::vec(any::<u8>(), 0..600);
    prop_oneof![
        version().prop_map(Payload::Version),
        Just(Payload::Verack),
        Just(Payload::GetAddr),
        any::<u64>().prop_map(Payload::Ping),
        any::<u64>().prop_map(Payload::Pong),
        proptest::collection::vec(inv_vector(), 0..300).prop_map(Payload::Inv),
        proptest::collection::vec(inv_vector(), 0..20).prop_map(Payload::GetData),
        bytes().prop_map(Payload::Tx),
        proptest::collection::vec((any::<u32>(), netaddr()), 0..40).prop_map(|v| {
            Payload::Addr(v.into_iter().map(|(time, addr)| AddrEntry { time, addr }).collect())
        }),
        ("[a-z]{1,12}", any::<u8>(), "\\PC{0,30}", bytes()).prop_map(|(message, code, reason, data)| {
            Payload::Reject(RejectPayload { message, code, reason, data })
        }),
        ("zz[a-z]{1,10}", bytes()).prop_map(|(command, payload)| Payload::Unknown { command, payload }),
    ]
}

fn network() -> impl Strategy<Value = Network> {
    prop_oneof![
        Just(Network::Mainnet),
        Just(Network::Testnet),
        any::<[u8; 4]>().prop_map(Network::Custom),
    ]
}

proptest! {
    #[test]
    fn message_round_trip(net in network(), payload in payload()) {
        let msg = WireMessage::new(net, payload);
        let frame = encode_message(&msg).unwrap();
        prop_assert_eq!(&frame[20..24], &checksum(&frame[HEADER_LEN..]));
        let (back, used) = decode_message(&frame, net).unwrap();
        prop_assert_eq!(used, frame.len());
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn stream_of_frames(msgs in proptest::collection::vec(payload(), 1..8), split in any::<prop::sample::Index>()) {
        let mut stream = Vec::new();
        for p in &msgs {
            stream.extend(encode_message(&WireMessage::new(Network::Mainnet, p.clone())).unwrap());
        }
        // Feed the stream in two arbitrary chunks, decoding whatever is complete.
        let cut = split.index(stream.len() + 1);
        let mut buf = stream[..cut].to_vec();
        let mut out = Vec::new();
        let mut fed_rest = false;
        loop {
            match decode_message(&buf, Network::Mainnet) {
                Ok((m, used)) => {
                    out.push(m.payload);
                    buf.drain(..used);
                }
                Err(e) if e.is_incomplete() && !fed_rest => {
                    buf.extend_from_slice(&stream[cut..]);
                    fed_rest = true;
                }
                Err(e) if e.is_incomplete() => break,
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }
        prop_assert!(buf.is_empty());
        prop_assert_eq!(out, msgs);
    }
}
