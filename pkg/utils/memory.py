"""
Round Memory
============
Three-tier audit trail of one collaboration round.

Tier 1: message exchange (every admission decision, sender -> receiver)
Tier 2: per-agent round records (what each agent shared and how it scored)
Tier 3: round events (strategy, ratio, curriculum state, timing)

All records use Pydantic for validation.
"""

from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from models.metrics import SCHEMA_VERSION, FusionMetrics

WALL_CLOCK_FIELDS = {"timestamp", "processing_time"}


class MessageEvent(BaseModel):
    """One admission decision"""
    sender: int = Field(..., ge=0)
    receiver: int = Field(..., ge=0)
    bits: int = Field(..., ge=0)
    accepted: bool
    inbound_total: int = Field(..., ge=0, description="Receiver inbound bits after the decision")
    timestamp: datetime = Field(default_factory=datetime.now)


class AgentRoundRecord(BaseModel):
    """What one agent shared and how its fused output scored"""
    agent: int = Field(..., ge=0)
    fg_cells: int = Field(..., ge=0)
    anchors: int = Field(default=0, ge=0)
    bg_selected: int = Field(default=0, ge=0)
    shared_cells: int = Field(..., ge=0)
    message_bits: int = Field(..., ge=0)
    bits_sent: int = Field(default=0, ge=0)
    bits_received: int = Field(default=0, ge=0)
    rejected_msgs: int = Field(default=0, ge=0)
    metrics: Optional[FusionMetrics] = None
    baseline: Optional[FusionMetrics] = Field(default=None, description="No-fusion metrics of the ego feature")


class RoundEvent(BaseModel):
    """Audit record of a completed round"""
    seed: int
    epoch: int = Field(..., ge=0)
    strategy: str
    ratio: float
    mode: str
    r_current: float = Field(..., ge=0.0)
    agents: int = Field(..., ge=0)
    processing_time: float = Field(..., ge=0.0)
    timestamp: datetime = Field(default_factory=datetime.now)
    success: bool = True
    error: Optional[str] = None


class RoundMemory:
    """
    Round memory for the orchestrator

    Tier 1: message exchange log
    Tier 2: per-agent records
    Tier 3: round event audit trail
    """

    def __init__(self):
        self.message_log: List[MessageEvent] = []
        self.agent_records: Dict[int, AgentRoundRecord] = {}
        self.round_log: List[RoundEvent] = []

    # ========================================================================
    # TIER 1: Message Exchange
    # ========================================================================

    def log_message(self, sender: int, receiver: int, bits: int, accepted: bool, inbound_total: int) -> MessageEvent:
        event = MessageEvent(
            sender=sender,
            receiver=receiver,
            bits=bits,
            accepted=accepted,
            inbound_total=inbound_total,
        )
        self.message_log.append(event)
        return event

    def get_messages(self, receiver: Optional[int] = None, sender: Optional[int] = None) -> List[MessageEvent]:
        """Message events filtered by receiver and/or sender"""
        return [
            e for e in self.message_log
            if (receiver is None or e.receiver == receiver) and (sender is None or e.sender == sender)
        ]

    def rejected_count(self, receiver: int) -> int:
        return sum(1 for e in self.get_messages(receiver=receiver) if not e.accepted)

    # ========================================================================
    # TIER 2: Agent Records
    # ========================================================================

    def log_agent_record(self, record: AgentRoundRecord) -> AgentRoundRecord:
        self.agent_records[record.agent] = record
        return record

    def update_agent_record(self, agent: int, **fields: Any) -> AgentRoundRecord:
        record = self.agent_records[agent].model_copy(update=fields)
        self.agent_records[agent] = record
        return record

    def get_agent_record(self, agent: int) -> Optional[AgentRoundRecord]:
        return self.agent_records.get(agent)

    def get_agent_records(self) -> List[AgentRoundRecord]:
        """Records in ascending agent order"""
        return [self.agent_records[a] for a in sorted(self.agent_records)]

    # ========================================================================
    # TIER 3: Round Audit Trail
    # ========================================================================

    def log_round_event(self, **fields: Any) -> RoundEvent:
        event = RoundEvent(**fields)
        self.round_log.append(event)
        return event

    def get_exchange_stats(self) -> Dict[str, Any]:
        """
        Statistics about message exchange

        Returns:
            Dict: Statistics summary
        """
        if not self.message_log:
            return {
                "total_messages": 0,
                "acceptance_rate": 0.0,
                "total_bits": 0,
                "receivers": []
            }

        total = len(self.message_log)
        accepted = sum(1 for e in self.message_log if e.accepted)
        return {
            "total_messages": total,
            "accepted_messages": accepted,
            "rejected_messages": total - accepted,
            "acceptance_rate": accepted / total,
            "total_bits": sum(e.bits for e in self.message_log if e.accepted),
            "receivers": sorted({e.receiver for e in self.message_log})
        }

    # ========================================================================
    # UTILITY METHODS
    # ========================================================================

    def export_to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        """
        Export all memory to dictionary format for serialization

        Args:
            include_timing: Keep wall-clock fields; without them two runs of
                the same round export identical dictionaries

        Returns:
            Dict: Complete memory state
        """
        exclude = None if include_timing else WALL_CLOCK_FIELDS
        return {
            "schema_version": SCHEMA_VERSION,
            "message_log": [e.model_dump(mode="json", exclude=exclude) for e in self.message_log],
            "agent_records": [r.model_dump(mode="json") for r in self.get_agent_records()],
            "round_log": [e.model_dump(mode="json", exclude=exclude) for e in self.round_log],
        }
