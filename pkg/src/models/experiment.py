from src.main import db
from datetime import datetime


class ExperimentResult(db.Model):
    __tablename__ = 'experiment_results'

    id = db.Column(db.Integer, primary_key=True)
    mode = db.Column(db.String(20), nullable=False)  # convergence, dynamic
    method = db.Column(db.String(10), nullable=False)  # am, eam, pam, index
    index = db.Column(db.String(10))  # bb, sb, ub, pbt
    invalidation = db.Column(db.String(10))
    pattern = db.Column(db.String(20))
    workload = db.Column(db.String(20))
    selectivity = db.Column(db.Float, nullable=False)
    scale = db.Column(db.Integer)
    rows = db.Column(db.Integer, nullable=False)
    seed = db.Column(db.Integer, default=0)
    sim_time_ns = db.Column(db.BigInteger, nullable=False)
    init_sim_time_ns = db.Column(db.BigInteger)
    host_wall_ms = db.Column(db.Float)
    reads = db.Column(db.BigInteger)
    line_flushes = db.Column(db.BigInteger)
    bits_modified = db.Column(db.BigInteger)  # wear-out
    invalidation_ns = db.Column(db.BigInteger)
    queries_to_convergence = db.Column(db.Integer)
    converged = db.Column(db.Boolean, default=False)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    @classmethod
    def from_row(cls, row):
        return cls(
            mode=row.mode, method=row.method, index=row.index, invalidation=row.invalidation,
            pattern=row.pattern, workload=row.workload, selectivity=row.selectivity,
            scale=row.scale, rows=row.rows, seed=row.seed, sim_time_ns=row.sim_time_ns,
            init_sim_time_ns=row.init_sim_time_ns, host_wall_ms=row.host_wall_ms,
            reads=row.reads, line_flushes=row.line_flushes, bits_modified=row.bits_modified,
            invalidation_ns=row.invalidation_ns,
            queries_to_convergence=row.queries_to_convergence, converged=row.converged,
        )

    def to_dict(self):
        return {
            'id': self.id,
            'mode': self.mode,
            'method': self.method,
            'index': self.index,
            'invalidation': self.invalidation,
            'pattern': self.pattern,
            'workload': self.workload,
            'selectivity': self.selectivity,
            'scale': self.scale,
            'rows': self.rows,
            'seed': self.seed,
            'sim_time_ns': self.sim_time_ns,
            'init_sim_time_ns': self.init_sim_time_ns,
            'host_wall_ms': self.host_wall_ms,
            'reads': self.reads,
            'line_flushes': self.line_flushes,
            'bits_modified': self.bits_modified,
            'invalidation_ns': self.invalidation_ns,
            'queries_to_convergence': self.queries_to_convergence,
            'converged': self.converged,
            'created_at': self.created_at.isoformat() if self.created_at else None
        }
