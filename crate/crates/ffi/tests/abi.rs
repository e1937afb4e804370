use std::ffi::{CStr, CString};
use std::ptr;

use mimt::*;
use mimt_core::dsp::{multiscale_mel_loss, Waveform};
use mimt_core::framing::TokenFile;
use mimt_core::rvq::{AudioTokenMatrix, Codebook, RvqState};

fn last_error() -> String {
    let p = mimt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn checkpoint() -> (RvqState, Vec<u8>) {
    let l0 = Codebook::from_entries(2, vec![0.0, 0.0, 4.0, 0.0, 0.0, 4.0, -4.0, -4.0]).unwrap();
    let l1 = Codebook::from_entries(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let state = RvqState::new(vec![l0, l1]).unwrap();
    let mut bytes = Vec::new();
    state.write_to(&mut bytes).unwrap();
    (state, bytes)
}

fn load(bytes: &[u8]) -> *mut MimtRvq {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mimt_rvq_from_bytes(bytes.as_ptr(), bytes.len(), &mut h) }, MimtStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn rvq_matches_core() {
    let (state, bytes) = checkpoint();
    let h = load(&bytes);
    unsafe {
        assert_eq!(mimt_rvq_dim(h), 2);
        assert_eq!(mimt_rvq_layers(h), 2);
        assert_eq!(mimt_rvq_codebook_size(h, 0), 4);
        assert_eq!(mimt_rvq_codebook_size(h, 1), 3);
        assert_eq!(mimt_rvq_codebook_size(h, 2), 0);

        let x = [4.2, 1.1, -3.0, -4.5, 0.1, 5.0];
        let mut idx = [0u16; 6];
        assert_eq!(mimt_rvq_quantize(h, x.as_ptr(), 3, 2, idx.as_mut_ptr(), idx.len()), MimtStatus::Ok);
        let q = state.quantize(&x).unwrap();
        assert_eq!(&idx[..], q.tokens.indices());
        assert_eq!(idx, [1, 2, 3, 1, 2, 2]);

        let mut rec = [0.0; 6];
        assert_eq!(mimt_rvq_dequantize(h, idx.as_ptr(), 3, 2, rec.as_mut_ptr(), rec.len()), MimtStatus::Ok);
        assert_eq!(rec.to_vec(), q.quantized);

        let mut one = [0u16; 3];
        assert_eq!(mimt_rvq_quantize(h, x.as_ptr(), 3, 1, one.as_mut_ptr(), one.len()), MimtStatus::Ok);
        assert_eq!(one, [1, 3, 2]);
        mimt_rvq_free(h);
    }
}

#[test]
fn rvq_errors() {
    let (_, bytes) = checkpoint();
    let h = load(&bytes);
    unsafe {
        let x = [0.0; 4];
        let mut idx = [0u16; 3];
        assert_eq!(mimt_rvq_quantize(h, x.as_ptr(), 2, 2, idx.as_mut_ptr(), idx.len()), MimtStatus::BufferTooSmall);
        assert!(last_error().contains("need 4"));
        assert_eq!(mimt_rvq_quantize(h, x.as_ptr(), 2, 3, idx.as_mut_ptr(), idx.len()), MimtStatus::InvalidArgument);

        let bad = [0u16, 3];
        let mut out = [0.0; 2];
        assert_eq!(mimt_rvq_dequantize(h, bad.as_ptr(), 1, 2, out.as_mut_ptr(), 2), MimtStatus::IndexOutOfRange);
        assert!(last_error().contains("index out of range"));

        assert_eq!(mimt_rvq_quantize(ptr::null(), x.as_ptr(), 2, 2, idx.as_mut_ptr(), 4), MimtStatus::NullPointer);
        mimt_rvq_free(h);
        mimt_rvq_free(ptr::null_mut());

        let mut h2 = ptr::null_mut();
        assert_eq!(mimt_rvq_from_bytes(bytes.as_ptr(), 7, &mut h2), MimtStatus::Format);
        assert!(h2.is_null());
        let garbage = b"NOPE\0\0\0\0";
        assert_eq!(mimt_rvq_from_bytes(garbage.as_ptr(), garbage.len(), &mut h2), MimtStatus::Format);
        let missing = CString::new("/nonexistent/codebooks.rvq").unwrap();
        assert_eq!(mimt_rvq_load(missing.as_ptr(), &mut h2), MimtStatus::Io);
    }
}

#[test]
fn success_clears_last_error() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(mimt_rvq_from_bytes(ptr::null(), 3, &mut h), MimtStatus::NullPointer);
        assert!(!mimt_last_error().is_null());
        let sizes = [1024usize];
        let mut v = 0.0;
        let a = vec![0.0; 2400];
        assert_eq!(mimt_mel_loss(a.as_ptr(), a.as_ptr(), a.len(), 24_000, &mut v), MimtStatus::Ok);
        assert!(mimt_last_error().is_null());
        assert_eq!(mimt_bitrate_bps(25.0, sizes.as_ptr(), 1), 250.0);
    }
}

#[test]
fn delay_round_trip() {
    let delays = [0usize, 1, 2, 3, 4, 5, 6, 7];
    let (group, layers) = (4, 8);
    let patch: Vec<u16> = (0..(group * layers) as u16).collect();
    unsafe {
        let rows = mimt_delayed_len(delays.as_ptr(), layers, group);
        assert_eq!(rows, 11);
        let mut delayed = vec![0u16; rows * layers];
        assert_eq!(
            mimt_delay_apply(patch.as_ptr(), group, layers, delays.as_ptr(), delayed.as_mut_ptr(), delayed.len()),
            MimtStatus::Ok
        );
        assert_eq!(delayed[0], 0);
        assert_eq!(delayed[1], MIMT_EMPTY);
        assert_eq!(delayed[layers + 1], 1);
        assert_eq!(delayed[10 * layers + 7], 31);

        let mut back = vec![0u16; group * layers];
        assert_eq!(
            mimt_delay_remove(delayed.as_ptr(), rows, layers, delays.as_ptr(), group, back.as_mut_ptr(), back.len()),
            MimtStatus::Ok
        );
        assert_eq!(back, patch);

        delayed[1] = 5;
        assert_eq!(
            mimt_delay_remove(delayed.as_ptr(), rows, layers, delays.as_ptr(), group, back.as_mut_ptr(), back.len()),
            MimtStatus::Shape
        );
        assert!(last_error().contains("inconsistent delay"));
        assert_eq!(
            mimt_delay_remove(delayed.as_ptr(), rows - 1, layers, delays.as_ptr(), group, back.as_mut_ptr(), back.len()),
            MimtStatus::Shape
        );
    }
}

#[test]
fn token_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.mimt").to_str().unwrap()).unwrap();
    let sizes = [1024u16, 128];
    let slots = [1u16, 2, 1023, 127, MIMT_EMPTY, 5];
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(mimt_tokens_new(sizes.as_ptr(), 2, slots.as_ptr(), 3, 4, &mut t), MimtStatus::Ok);
        assert_eq!(mimt_tokens_write(t, path.as_ptr()), MimtStatus::Ok);
        mimt_tokens_free(t);

        let mut r = ptr::null_mut();
        assert_eq!(mimt_tokens_read(path.as_ptr(), &mut r), MimtStatus::Ok);
        assert_eq!((mimt_tokens_frames(r), mimt_tokens_layers(r), mimt_tokens_group(r)), (3, 2, 4));
        assert_eq!(mimt_tokens_codebook_size(r, 1), 128);
        let mut out = [0u16; 6];
        assert_eq!(mimt_tokens_slots(r, out.as_mut_ptr(), out.len()), MimtStatus::Ok);
        assert_eq!(out, slots);
        mimt_tokens_free(r);

        let on_disk = std::fs::read(dir.path().join("t.mimt")).unwrap();
        let tf = TokenFile::from_bytes(&on_disk).unwrap();
        assert_eq!(tf.slots[4], None);

        let mut bad = on_disk.clone();
        let n = bad.len();
        bad[n - 2..].copy_from_slice(&200u16.to_le_bytes());
        assert_eq!(mimt_tokens_from_bytes(bad.as_ptr(), bad.len(), &mut r), MimtStatus::IndexOutOfRange);

        let out_of_range = [1u16, 128];
        assert_eq!(mimt_tokens_new(sizes.as_ptr(), 2, out_of_range.as_ptr(), 1, 4, &mut t), MimtStatus::IndexOutOfRange);
    }
}

#[test]
fn token_file_matches_core_encoding() {
    let m = AudioTokenMatrix::new(vec![1024, 128], vec![7, 9, 11, 13]).unwrap();
    let expected = TokenFile::from_matrix(&m, 4).unwrap().to_bytes().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.mimt");
    let path = CString::new(p.to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        let sizes = [1024u16, 128];
        assert_eq!(mimt_tokens_new(sizes.as_ptr(), 2, m.indices().as_ptr(), 2, 4, &mut t), MimtStatus::Ok);
        assert_eq!(mimt_tokens_write(t, path.as_ptr()), MimtStatus::Ok);
        mimt_tokens_free(t);
    }
    assert_eq!(std::fs::read(p).unwrap(), expected);
}

#[test]
fn mel_loss_matches_core() {
    let a = Waveform::sine(440.0, 0.5, 4800, 24_000);
    let b = Waveform::sine(660.0, 0.5, 4800, 24_000);
    let want = multiscale_mel_loss(&a, &b).unwrap();
    let mut got = 0.0;
    let st = unsafe { mimt_mel_loss(a.samples.as_ptr(), b.samples.as_ptr(), 4800, 24_000, &mut got) };
    assert_eq!(st, MimtStatus::Ok);
    assert_eq!(got, want);
    let st = unsafe { mimt_mel_loss(a.samples.as_ptr(), b.samples.as_ptr(), 0, 24_000, &mut got) };
    assert_ne!(st, MimtStatus::Ok);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(mimt_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
