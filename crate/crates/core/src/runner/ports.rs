use std::collections::BTreeSet;
use std::io;
use std::net::TcpListener;
use std::sync::Mutex;

static RESERVED: Mutex<BTreeSet<u16>> = Mutex::new(BTreeSet::new());

/// A host port held for one launched system. Released on drop.
#[derive(Debug)]
pub struct PortLease(u16);

impl PortLease {
    pub fn port(&self) -> u16 {
        self.0
    }
}

impl Drop for PortLease {
    fn drop(&mut self) {
        RESERVED.lock().expect("port set").remove(&self.0);
    }
}

/// Pick a free ephemeral port on the loopback interface that no live lease
/// in this process holds.
pub fn allocate() -> io::Result<PortLease> {
    for _ in 0..64 {
        let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
        if RESERVED.lock().expect("port set").insert(port) {
            return Ok(PortLease(port));
        }
    }
    Err(io::Error::new(
        io::ErrorKind::AddrInUse,
        "no free port found",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leases_are_distinct_and_released() {
        let leases: Vec<PortLease> = (0..50).map(|_| allocate().unwrap()).collect();
        let ports: BTreeSet<u16> = leases.iter().map(PortLease::port).collect();
        assert_eq!(ports.len(), 50);
        let p = leases[0].port();
        drop(leases);
        assert!(!RESERVED.lock().unwrap().contains(&p));
    }
}
