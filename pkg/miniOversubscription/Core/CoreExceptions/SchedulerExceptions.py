from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


class SchedulerException(MiniOversubscriptionException):
    pass


class DeploymentFailure(SchedulerException):
    """Raised when no server passes the constraint rules for a VM (or for one VM of a multi-VM deployment)."""
    def __init__(self, vm_id: str, cores: int, memory_gb: float, variables: dict):
        self.vm_id = vm_id
        self._message = f'\nNo server can host VM "{vm_id}" ({cores} cores, {memory_gb} GB).'
        self.description = (f'\nEvery server failed the constraint rules (free cores and free memory). When the VM is\n'
                            f'part of a deployment, the whole deployment is rejected and nothing stays placed.')
        super().__init__(variables)


class UnknownVm(SchedulerException):
    def __init__(self, vm_id: str, variables: dict):
        self._message = f'\nThe VM "{vm_id}" is not placed in this cluster.'
        self.description = ''
        super().__init__(variables)


class ClusterInvariantBroken(SchedulerException):
    def __init__(self, reason: str, variables: dict):
        self._message = f'\nThe cluster state is inconsistent: {reason}'
        self.description = f'\nThis points at a bug in the placement bookkeeping.'
        super().__init__(variables)
