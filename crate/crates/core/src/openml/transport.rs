use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub retry_after: Option<Duration>,
}

/// Blocking HTTP GET.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new()
                .timeout(timeout)
                .user_agent(concat!("metatask/", env!("CARGO_PKG_VERSION")))
                .build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

fn read_response(resp: ureq::Response) -> Result<HttpResponse, String> {
    let status = resp.status();
    let retry_after = resp
        .header("Retry-After")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let mut body = Vec::new();
    resp.into_reader()
        .read_to_end(&mut body)
        .map_err(|e| e.to_string())?;
    Ok(HttpResponse {
        status,
        body,
        retry_after,
    })
}

impl Transport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, String> {
        match self.agent.get(url).call() {
            Ok(resp) => read_response(resp),
            Err(ureq::Error::Status(_, resp)) => read_response(resp),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Counting semaphore bounding the number of requests in flight.
pub(crate) struct Gate {
    max: usize,
    state: Mutex<(usize, usize)>, // (in flight, peak)
    cv: Condvar,
}

pub(crate) struct GatePass<'a>(&'a Gate);

impl Gate {
    pub(crate) fn new(max: usize) -> Self {
        Gate {
            max: max.max(1),
            state: Mutex::new((0, 0)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn enter(&self) -> GatePass<'_> {
        let mut st = self.state.lock().expect("gate lock");
        while st.0 >= self.max {
            st = self.cv.wait(st).expect("gate lock");
        }
        st.0 += 1;
        st.1 = st.1.max(st.0);
        GatePass(self)
    }

    pub(crate) fn peak(&self) -> usize {
        self.state.lock().expect("gate lock").1
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut st = self.0.state.lock().expect("gate lock");
        st.0 -= 1;
        self.0.cv.notify_one();
    }
}
