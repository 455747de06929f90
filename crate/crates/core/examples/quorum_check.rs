//! Exhaustive certificate enumeration for FaB and for hBFT's parameters.
//!
//!     cargo run --example quorum_check -- 1

use consensus_lab::quorum::{check_fab_quorum_intersection, check_hbft_quorum_contrast};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let fab = check_fab_quorum_intersection(f)?;
    let hbft = check_hbft_quorum_contrast(f)?;
    print!("{fab}{hbft}");

    // a few more hBFT certificates, with the holder of the commit
    // certificate starred
    for w in hbft.witnesses.iter().skip(1).take(3) {
        let cert: Vec<String> = w
            .certificate
            .iter()
            .map(|e| {
                let v = e.vote.label().unwrap_or("empty");
                format!("{}:{v}{}", e.replica, if e.certified { "*" } else { "" })
            })
            .collect();
        println!("  #{}: [{}] -> {}", w.case_index, cert.join(", "), w.outcome);
    }
    Ok(())
}
