"""
URL configuration for the control_lab project.

The admin browses recorded experiment runs; the experiments app serves the
same runs as read-only JSON.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('', include('experiments.urls')),
]
