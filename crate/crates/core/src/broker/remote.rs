use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{Broker, BrokerError, Kernel, KernelAnswer, KernelError, Question, SubQuery, Value};
use crate::term::{Symbol, Term};
use crate::wire::{self, Client, Failure, Message, Procedures};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

type TcpClient = Client<BufReader<TcpStream>, TcpStream>;

/// A kernel living in another process, reached over the wire protocol.
/// The connection is opened on the first question and reopened after a
/// transport failure.
pub struct RemoteKernel {
    endpoint: String,
    client: Mutex<Option<TcpClient>>,
}

impl RemoteKernel {
    pub fn new(endpoint: &str) -> Self {
        RemoteKernel {
            endpoint: endpoint.to_string(),
            client: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Kernel for RemoteKernel {
    fn answer(&self, q: &Question, _: &mut dyn SubQuery) -> Result<KernelAnswer, KernelError> {
        let call = q.to_term();
        let (procedure, args) = match &call {
            Term::Apply { head, args } => (head.clone(), args.clone()),
            other => return Err(KernelError::Failed(format!("cannot send {other:?}"))),
        };
        let mut guard = self
            .client
            .lock()
            .map_err(|_| KernelError::Failed("connection poisoned".into()))?;
        if guard.is_none() {
            let client = Client::connect(&self.endpoint, CONNECT_TIMEOUT)
                .map_err(|e| KernelError::Failed(format!("cannot reach {}: {e}", self.endpoint)))?;
            *guard = Some(client);
        }
        let client = guard.as_mut().expect("connected above");
        let reply = match client.call(&procedure, args) {
            Ok(m) => m,
            Err(e) => {
                *guard = None;
                return Err(KernelError::Failed(e.to_string()));
            }
        };
        match reply {
            Message::Completed { result, .. } => Value::from_term(&result)
                .map(KernelAnswer::value)
                .map_err(KernelError::Failed),
            Message::Terminated { code, text, .. } => {
                if code == wire::SYSTEM_SPECIFIC {
                    *guard = None;
                }
                Err(KernelError::Failed(format!("{code}: {text}")))
            }
            Message::Call { .. } => Err(KernelError::Failed("unexpected procedure call".into())),
        }
    }
}

/// Serves a broker's questions as wire procedures: the procedure symbol and
/// arguments together form the question term.
pub struct BrokerProcedures {
    broker: Arc<Broker>,
}

impl BrokerProcedures {
    pub fn new(broker: Arc<Broker>) -> Self {
        BrokerProcedures { broker }
    }
}

impl Procedures for BrokerProcedures {
    fn handle(&self, procedure: &Symbol, args: &[Term]) -> Result<Term, Failure> {
        let term = if args.is_empty() {
            Term::Symbol(procedure.clone())
        } else {
            Term::Apply {
                head: procedure.clone(),
                args: args.to_vec(),
            }
        };
        let question = Question::from_term(&term).map_err(|e| match e {
            BrokerError::Unroutable(_) => Failure::new(
                wire::UNKNOWN_PROCEDURE,
                format!("unknown procedure {procedure}"),
            ),
            other => Failure::new(wire::SYSTEM_SPECIFIC, other.to_string()),
        })?;
        match self.broker.ask(&question) {
            Ok(answer) => Ok(answer.value.to_term()),
            Err(BrokerError::Unroutable(what)) => Err(Failure::new(
                wire::UNKNOWN_PROCEDURE,
                format!("no kernel accepts {what}"),
            )),
            Err(e) => Err(Failure::new(wire::SYSTEM_SPECIFIC, e.to_string())),
        }
    }
}

/// Serves `broker` on `listener` until the listener fails.
pub fn serve(broker: Arc<Broker>, listener: TcpListener) -> std::io::Result<()> {
    wire::serve_tcp(listener, Arc::new(BrokerProcedures::new(broker)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::{default_accepts, KernelDescriptor, Transport};
    use crate::expr::parse;
    use crate::hes::RuleBase;
    use crate::snf::FgAbelianGroup;

    fn spawn_server(broker: Arc<Broker>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || serve(broker, listener));
        addr
    }

    #[test]
    fn remote_grouphom_gives_the_same_answer() {
        let server = Arc::new(Broker::with_default_kernels(Arc::new(RuleBase::builtin())));
        let addr = spawn_server(Arc::clone(&server));

        let local = Broker::new();
        local
            .register_kernel(KernelDescriptor::remote(
                "grouphom",
                default_accepts("grouphom").unwrap(),
                &addr,
            ))
            .unwrap();
        let q = Question::homology(parse("K(C(5),1)").unwrap(), 5);
        let a = local.ask(&q).unwrap();
        assert_eq!(a.value, Value::Group(FgAbelianGroup::cyclic(5)));
        assert_eq!(a.provenance, ["grouphom"]);
        assert_eq!(a.trace_id, None);
        assert_eq!(local.stats().kernels[0].transport, Transport::Remote(addr));

        let odd = Question::homology(parse("C(2)*C(3)").unwrap(), 3);
        assert_eq!(
            local.ask(&odd).unwrap().value,
            Value::Group(FgAbelianGroup::cyclic(6))
        );
    }

    #[test]
    fn unreachable_remote_is_a_computation_error() {
        let local = Broker::new();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        local
            .register_kernel(KernelDescriptor::remote(
                "simplicial",
                default_accepts("simplicial").unwrap(),
                &addr,
            ))
            .unwrap();
        let err = local
            .ask(&Question::homology(parse("S(2)").unwrap(), 2))
            .unwrap_err();
        assert!(
            matches!(err, BrokerError::Computation { ref kernel, .. } if kernel == "simplicial"),
            "{err}"
        );
    }

    #[test]
    fn server_rejects_unknown_procedures() {
        let server = Arc::new(Broker::with_default_kernels(Arc::new(RuleBase::builtin())));
        let procs = BrokerProcedures::new(server);
        let f = procs
            .handle(&Symbol::new("algtop1", "sphere"), &[Term::int(2)])
            .unwrap_err();
        assert_eq!(f.code, wire::UNKNOWN_PROCEDURE);
        let ok = procs
            .handle(
                &Symbol::new("algtop1", "homotopy_group"),
                &[parse("S(4)").unwrap(), Term::int(4)],
            )
            .unwrap();
        assert_eq!(
            Value::from_term(&ok).unwrap(),
            Value::Group(FgAbelianGroup::integers())
        );
    }
}
