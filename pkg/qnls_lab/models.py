"""
SQLAlchemy models for the optional sweep store.
"""

from sqlalchemy import Float, String, UniqueConstraint
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column


# Base class for SQLAlchemy models
class Base(DeclarativeBase):
    pass


# One stored sweep record, "scan_records" table
class ScanRow(Base):
    __tablename__ = "scan_records"

    # A sweep key is stored at most once
    __table_args__ = (
        UniqueConstraint(
            "alpha", "N", "t", "n1", "n2", "statistic", "samples", "seed", name="uix_sweep_key"
        ),
    )

    id: Mapped[int] = mapped_column(primary_key=True, autoincrement=True)
    alpha: Mapped[float] = mapped_column(Float, nullable=False, index=True)
    N: Mapped[int] = mapped_column(nullable=False, index=True)
    t: Mapped[float] = mapped_column(Float, nullable=False)
    n1: Mapped[int] = mapped_column(nullable=False)
    n2: Mapped[int] = mapped_column(nullable=False)
    statistic: Mapped[str] = mapped_column(String(32), nullable=False, index=True)
    value: Mapped[float] = mapped_column(Float, nullable=False)
    samples: Mapped[int] = mapped_column(nullable=False)
    # Unsigned 64-bit seed as decimal text
    seed: Mapped[str] = mapped_column(String(20), nullable=False)

    def __repr__(self) -> str:
        return (
            f"ScanRow(id={self.id!r}, alpha={self.alpha!r}, N={self.N!r}, t={self.t!r}, "
            f"n=({self.n1!r}, {self.n2!r}), statistic={self.statistic!r}, "
            f"value={self.value!r}, samples={self.samples!r}, seed={self.seed!r})"
        )
