//! Two phones meet for six minutes. Each side ends up with the same token
//! secret and would upload a byte-identical record.

mod common;

use tracecorona::client::{Device, DeviceConfig};

fn main() {
    let mut alice = Device::new(DeviceConfig::default(), [1; 32]);
    let mut bob = Device::new(DeviceConfig::default(), [2; 32]);
    let start = 36_000;
    let oa = alice.offer(start);
    let ob = bob.offer(start);
    println!("frame {}", oa.frame_index);
    println!("alice  EI {}  pk {}", oa.ephemeral_id.to_hex(), oa.public_key.to_hex());
    println!("bob    EI {}  pk {}", ob.ephemeral_id.to_hex(), ob.public_key.to_hex());

    let (ta, tb) = common::meet(&mut alice, &mut bob, start, start + 360, -58, true).expect("contact long enough");
    println!("alice token hash {}", ta.hash().to_hex());
    println!("bob   token hash {}", tb.hash().to_hex());
    assert_eq!(ta.secret, tb.secret);

    let (ra, rb) = (ta.to_upload_record(), tb.to_upload_record());
    println!("upload ciphertext {}", hex::encode(&ra.ciphertext));
    println!("records identical: {}", ra == rb);
    println!("framed upload size: {} bytes", ra.framed_len());
}
